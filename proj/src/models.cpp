#include "headpose/models.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <random>
#include <sstream>

#include "headpose/error.hpp"
#include "headpose/format.hpp"

namespace headpose {

using engine::Shape;
using engine::Tensor;

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

std::string shape_str(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

// Per-sample output shape of one layer, or invalid_argument if it does not apply.
Shape propagate(const LayerSpec& spec, const Shape& in) {
  auto fail = [&](const std::string& why) -> Shape {
    throw std::invalid_argument(to_string(spec) + " cannot follow shape " + shape_str(in) + ": " + why);
  };
  return std::visit(
      Overloaded{
          [&](const DenseSpec& d) -> Shape {
            if (in.size() != 1 || in[0] != d.in) return fail("expects " + std::to_string(d.in) + " features");
            return {d.out};
          },
          [&](const Conv2dSpec& c) -> Shape {
            if (in.size() != 3 || in[0] != c.in_channels)
              return fail("expects " + std::to_string(c.in_channels) + " channels");
            const std::size_t h = in[1] + 2 * c.padding, w = in[2] + 2 * c.padding;
            if (c.stride == 0 || h < c.kernel || w < c.kernel || (h - c.kernel) % c.stride || (w - c.kernel) % c.stride)
              return fail("non-integral output extent");
            return {c.out_channels, (h - c.kernel) / c.stride + 1, (w - c.kernel) / c.stride + 1};
          },
          [&](const ReluSpec&) -> Shape { return in; },
          [&](const MaxPool2dSpec& p) -> Shape {
            if (in.size() != 3 || p.window == 0 || in[1] % p.window || in[2] % p.window)
              return fail("window must divide the spatial extent");
            return {in[0], in[1] / p.window, in[2] / p.window};
          },
          [&](const FlattenSpec&) -> Shape { return {engine::numel(in)}; },
      },
      spec);
}

std::vector<std::size_t> parse_args(std::string_view body) {
  std::vector<std::size_t> out;
  while (!body.empty()) {
    const auto comma = body.find(',');
    const auto tok = body.substr(0, comma);
    std::size_t v = 0;
    const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) {
      throw std::invalid_argument("bad layer argument '" + std::string(tok) + "'");
    }
    out.push_back(v);
    if (comma == std::string_view::npos) break;
    body.remove_prefix(comma + 1);
  }
  return out;
}

}  // namespace

std::string to_string(const LayerSpec& spec) {
  return std::visit(Overloaded{
                        [](const DenseSpec& d) { return "dense(" + std::to_string(d.in) + "," + std::to_string(d.out) + ")"; },
                        [](const Conv2dSpec& c) {
                          return "conv2d(" + std::to_string(c.in_channels) + "," + std::to_string(c.out_channels) + "," +
                                 std::to_string(c.kernel) + "," + std::to_string(c.stride) + "," +
                                 std::to_string(c.padding) + ")";
                        },
                        [](const ReluSpec&) { return std::string("relu"); },
                        [](const MaxPool2dSpec& p) { return "maxpool2d(" + std::to_string(p.window) + ")"; },
                        [](const FlattenSpec&) { return std::string("flatten"); },
                    },
                    spec);
}

LayerSpec parse_layer_spec(std::string_view text) {
  if (text == "relu") return ReluSpec{};
  if (text == "flatten") return FlattenSpec{};
  const auto open = text.find('(');
  if (open == std::string_view::npos || text.back() != ')') {
    throw std::invalid_argument("unknown layer '" + std::string(text) + "'");
  }
  const auto name = text.substr(0, open);
  const auto args = parse_args(text.substr(open + 1, text.size() - open - 2));
  if (name == "dense" && args.size() == 2) return DenseSpec{args[0], args[1]};
  if (name == "conv2d" && args.size() == 5) return Conv2dSpec{args[0], args[1], args[2], args[3], args[4]};
  if (name == "maxpool2d" && args.size() == 1) return MaxPool2dSpec{args[0]};
  throw std::invalid_argument("unknown layer '" + std::string(text) + "'");
}

std::size_t parameter_count(const LayerSpec& spec) {
  if (const auto* d = std::get_if<DenseSpec>(&spec)) return d->in * d->out + d->out;
  if (const auto* c = std::get_if<Conv2dSpec>(&spec)) {
    return c->out_channels * c->in_channels * c->kernel * c->kernel + c->out_channels;
  }
  return 0;
}

// ---- Network ---------------------------------------------------------------

Network::Network(std::vector<LayerSpec> layers, Shape sample_shape)
    : layers_(std::move(layers)), sample_shape_(std::move(sample_shape)) {
  Shape shape = sample_shape_;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    shape = propagate(layers_[i], shape);
    if (const auto* d = std::get_if<DenseSpec>(&layers_[i])) {
      params_.push_back(Tensor::zeros({d->out, d->in}, true));
      params_.push_back(Tensor::zeros({d->out}, true));
      param_layer_.insert(param_layer_.end(), {i, i});
    } else if (const auto* c = std::get_if<Conv2dSpec>(&layers_[i])) {
      params_.push_back(Tensor::zeros({c->out_channels, c->in_channels, c->kernel, c->kernel}, true));
      params_.push_back(Tensor::zeros({c->out_channels}, true));
      param_layer_.insert(param_layer_.end(), {i, i});
    }
  }
  output_shape_ = shape;
}

void Network::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < params_.size(); i += 2) {
    const Shape& ws = params_[i].shape();
    const std::size_t fan_in = engine::numel(ws) / ws[0];
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& w : params_[i].mutable_values()) w = dist(rng);
    auto bias = params_[i + 1].mutable_values();
    std::fill(bias.begin(), bias.end(), 0.0);
  }
}

Tensor Network::forward(const Tensor& batch) const {
  Shape expected = sample_shape_;
  expected.insert(expected.begin(), batch.shape().empty() ? 0 : batch.shape()[0]);
  if (batch.shape() != expected) {
    throw std::invalid_argument("network expects batches of shape N x " + shape_str(sample_shape_) + ", got " +
                                shape_str(batch.shape()));
  }
  Tensor x = batch;
  std::size_t p = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerSpec& spec = layers_[i];
    // relu and max pooling commute (both monotone), and pooling first touches a
    // quarter of the data; values and gradients are identical either way.
    if (std::holds_alternative<ReluSpec>(spec) && i + 1 < layers_.size() &&
        std::holds_alternative<MaxPool2dSpec>(layers_[i + 1])) {
      x = engine::relu(engine::maxpool2d(x, std::get<MaxPool2dSpec>(layers_[i + 1]).window));
      ++i;
      continue;
    }
    x = std::visit(Overloaded{
                       [&](const DenseSpec&) {
                         Tensor y = engine::dense(x, params_[p], params_[p + 1]);
                         p += 2;
                         return y;
                       },
                       [&](const Conv2dSpec& c) {
                         Tensor y = engine::conv2d(x, params_[p], params_[p + 1], {c.stride, c.padding});
                         p += 2;
                         return y;
                       },
                       [&](const ReluSpec&) { return engine::relu(x); },
                       [&](const MaxPool2dSpec& mp) { return engine::maxpool2d(x, mp.window); },
                       [&](const FlattenSpec&) { return engine::flatten(x); },
                   },
                   spec);
  }
  return x;
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor& t : params_) n += t.size();
  return n;
}

std::vector<double> Network::flat_parameters() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  for (const Tensor& t : params_) flat.insert(flat.end(), t.values().begin(), t.values().end());
  return flat;
}

void Network::set_flat_parameters(std::span<const double> flat) {
  if (flat.size() != parameter_count()) {
    throw std::invalid_argument("expected " + std::to_string(parameter_count()) + " parameters, got " +
                                std::to_string(flat.size()));
  }
  std::size_t off = 0;
  for (Tensor& t : params_) {
    auto v = t.mutable_values();
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), v.size(), v.begin());
    off += v.size();
  }
}

Network Network::clone() const {
  Network copy(layers_, sample_shape_);
  copy.set_flat_parameters(flat_parameters());
  return copy;
}

// ---- PoseModel ---------------------------------------------------------------

std::string_view model_kind_name(ModelKind kind) { return kind == ModelKind::kMlp ? "mlp" : "cnn"; }

std::vector<PoseAngles> poses_from_tensor(const Tensor& out) {
  if (out.shape().size() != 2 || out.shape()[1] != 3) {
    throw std::invalid_argument("pose output must be N x 3, got " + shape_str(out.shape()));
  }
  const auto v = out.values();
  std::vector<PoseAngles> poses(out.shape()[0]);
  for (std::size_t i = 0; i < poses.size(); ++i) poses[i] = {v[3 * i], v[3 * i + 1], v[3 * i + 2]};
  return poses;
}

Tensor poses_to_tensor(std::span<const PoseAngles> poses) {
  std::vector<double> v;
  v.reserve(3 * poses.size());
  for (const PoseAngles& p : poses) v.insert(v.end(), {p.yaw, p.pitch, p.roll});
  return Tensor({poses.size(), 3}, std::move(v));
}

namespace {
// One sample per forward pass: GEMM kernels round differently depending on a
// row's position and the batch extent, and predictions must not depend on
// which other samples share the batch.
constexpr std::size_t kInferenceChunk = 1;
}

std::vector<PoseAngles> PoseModel::run_chunked(std::size_t count,
                                               const std::function<Tensor(std::size_t, std::size_t)>& make) const {
  engine::NoGradGuard no_grad;
  std::vector<PoseAngles> out;
  out.reserve(count);
  for (std::size_t begin = 0; begin < count; begin += kInferenceChunk) {
    const std::size_t end = std::min(count, begin + kInferenceChunk);
    const auto chunk = poses_from_tensor(net_.forward(make(begin, end)));
    out.insert(out.end(), chunk.begin(), chunk.end());
  }
  return out;
}

std::vector<PoseAngles> PoseModel::predict(std::span<const KeypointSet> batch) const {
  return run_chunked(batch.size(), [&](std::size_t b, std::size_t e) { return encode(batch.subspan(b, e - b)); });
}

// ---- MLP ---------------------------------------------------------------------

std::vector<LayerSpec> MlpModel::architecture() {
  return {DenseSpec{kMlpFeatureDim, kHidden}, ReluSpec{}, DenseSpec{kHidden, kHidden}, ReluSpec{},
          DenseSpec{kHidden, 3}};
}

MlpModel::MlpModel(std::uint64_t seed) : PoseModel(Network(architecture(), {kMlpFeatureDim})) {
  network().initialize(seed);
}

Tensor MlpModel::encode(std::span<const KeypointSet> batch) const {
  std::vector<double> v;
  v.reserve(batch.size() * kMlpFeatureDim);
  for (const KeypointSet& kps : batch) {
    const MlpFeatures f = assemble_mlp_features(kps);
    v.insert(v.end(), f.begin(), f.end());
  }
  return Tensor({batch.size(), kMlpFeatureDim}, std::move(v));
}

std::string MlpModel::descriptor() const {
  std::string layers;
  for (const LayerSpec& l : network().layers()) layers += (layers.empty() ? "" : ";") + to_string(l);
  return "arch=mlp\nlayers=" + layers + "\n";
}

std::unique_ptr<PoseModel> MlpModel::clone() const { return std::unique_ptr<PoseModel>(new MlpModel(network().clone())); }

std::vector<PoseAngles> mlp_predict(const MlpModel& model, std::span<const MlpFeatures> features) {
  engine::NoGradGuard no_grad;
  std::vector<double> v;
  v.reserve(features.size() * kMlpFeatureDim);
  for (const MlpFeatures& f : features) v.insert(v.end(), f.begin(), f.end());
  if (features.empty()) return {};
  return poses_from_tensor(model.network().forward(Tensor({features.size(), kMlpFeatureDim}, std::move(v))));
}

// ---- CNN ---------------------------------------------------------------------

std::vector<LayerSpec> HeatmapCnnModel::architecture(GridSize grid, const CnnWidths& w) {
  if (grid.height % 8 || grid.width % 8 || grid.height < 8 || grid.width < 8) {
    throw UsageError("CNN grid extents must be positive multiples of 8, got " + std::to_string(grid.height) + "x" +
                     std::to_string(grid.width));
  }
  const std::size_t flat = w.conv3 * (grid.height / 8) * (grid.width / 8);
  return {Conv2dSpec{kNumKeypoints, w.conv1, 3, 1, 1}, ReluSpec{}, MaxPool2dSpec{2},
          Conv2dSpec{w.conv1, w.conv2, 3, 1, 1},       ReluSpec{}, MaxPool2dSpec{2},
          Conv2dSpec{w.conv2, w.conv3, 3, 1, 1},       ReluSpec{}, MaxPool2dSpec{2},
          FlattenSpec{},                               DenseSpec{flat, w.fc1}, ReluSpec{},
          DenseSpec{w.fc1, 3}};
}

HeatmapCnnModel::HeatmapCnnModel(GridSize grid, double sigma, CnnWidths widths, std::uint64_t seed)
    : HeatmapCnnModel(grid, sigma, widths, Network(architecture(grid, widths), {kNumKeypoints, grid.height, grid.width})) {
  network().initialize(seed);
}

HeatmapCnnModel::HeatmapCnnModel(GridSize grid, double sigma, CnnWidths widths, Network net)
    : PoseModel(std::move(net)), grid_(grid), sigma_(sigma), widths_(widths) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw UsageError("heatmap sigma must be positive");
}

Tensor HeatmapCnnModel::encode(std::span<const KeypointSet> batch) const {
  const std::size_t per = kNumKeypoints * grid_.cells();
  std::vector<double> v(batch.size() * per);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    render_stack_into(batch[i], grid_, sigma_, std::span<double>(v).subspan(i * per, per));
  }
  return Tensor({batch.size(), kNumKeypoints, grid_.height, grid_.width}, std::move(v));
}

Tensor HeatmapCnnModel::encode_stacks(std::span<const HeatmapStack> stacks) const {
  std::vector<double> v;
  v.reserve(stacks.size() * kNumKeypoints * grid_.cells());
  for (const HeatmapStack& s : stacks) {
    if (s.grid() != grid_) {
      throw DataError("heatmap stack is " + std::to_string(s.grid().height) + "x" + std::to_string(s.grid().width) +
                      " but the model expects " + std::to_string(grid_.height) + "x" + std::to_string(grid_.width));
    }
    v.insert(v.end(), s.data().begin(), s.data().end());
  }
  return Tensor({stacks.size(), kNumKeypoints, grid_.height, grid_.width}, std::move(v));
}

std::string HeatmapCnnModel::descriptor() const {
  std::string layers;
  for (const LayerSpec& l : network().layers()) layers += (layers.empty() ? "" : ";") + to_string(l);
  return "arch=cnn\ngrid=" + std::to_string(grid_.height) + "x" + std::to_string(grid_.width) +
         "\nsigma=" + format_double(sigma_) + "\nlayers=" + layers + "\n";
}

std::unique_ptr<PoseModel> HeatmapCnnModel::clone() const {
  return std::unique_ptr<PoseModel>(new HeatmapCnnModel(grid_, sigma_, widths_, network().clone()));
}

std::vector<PoseAngles> cnn_predict(const HeatmapCnnModel& model, std::span<const HeatmapStack> stacks) {
  if (stacks.empty()) return {};
  for (const HeatmapStack& s : stacks) {
    if (s.grid() != model.grid()) model.encode_stacks(std::span<const HeatmapStack>(&s, 1));
  }
  engine::NoGradGuard no_grad;
  std::vector<PoseAngles> out;
  for (std::size_t b = 0; b < stacks.size(); b += kInferenceChunk) {
    const auto n = std::min(kInferenceChunk, stacks.size() - b);
    const auto chunk = poses_from_tensor(model.network().forward(model.encode_stacks(stacks.subspan(b, n))));
    out.insert(out.end(), chunk.begin(), chunk.end());
  }
  return out;
}

// ---- checkpoints -----------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'H', 'P', 'K', 'T'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(const std::string& in, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[off + i])) << (8 * i);
  return v;
}

struct Descriptor {
  std::map<std::string, std::string> fields;

  const std::string& get(const std::string& key) const {
    const auto it = fields.find(key);
    if (it == fields.end()) throw CheckpointError("checkpoint descriptor is missing '" + key + "'");
    return it->second;
  }
};

Descriptor parse_descriptor(const std::string& text) {
  Descriptor d;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw CheckpointError("malformed checkpoint descriptor line '" + line + "'");
    d.fields[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return d;
}

std::vector<LayerSpec> parse_layers(const std::string& text) {
  std::vector<LayerSpec> layers;
  std::string_view rest = text;
  try {
    while (!rest.empty()) {
      const auto semi = rest.find(';');
      layers.push_back(parse_layer_spec(rest.substr(0, semi)));
      if (semi == std::string_view::npos) break;
      rest.remove_prefix(semi + 1);
    }
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint descriptor: ") + e.what());
  }
  return layers;
}

GridSize parse_grid(const std::string& text) {
  const auto x = text.find('x');
  std::size_t h = 0, w = 0;
  if (x == std::string::npos || std::from_chars(text.data(), text.data() + x, h).ptr != text.data() + x ||
      std::from_chars(text.data() + x + 1, text.data() + text.size(), w).ptr != text.data() + text.size()) {
    throw CheckpointError("bad grid '" + text + "' in checkpoint descriptor");
  }
  return {h, w};
}

struct RawCheckpoint {
  Descriptor descriptor;
  std::string payload;
};

RawCheckpoint read_raw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
    throw CheckpointError(path.string() + " is not a checkpoint (bad magic)");
  }
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint32_t desc_len = get_u32(bytes, 8);
  if (bytes.size() < 12 + static_cast<std::size_t>(desc_len)) {
    throw CheckpointError("checkpoint truncated inside the descriptor");
  }
  return {parse_descriptor(bytes.substr(12, desc_len)), bytes.substr(12 + desc_len)};
}

std::vector<double> decode_payload(const std::string& payload, std::size_t expected) {
  if (payload.size() != expected * 8) {
    throw CheckpointError("checkpoint payload length " + std::to_string(payload.size()) + " bytes does not match " +
                          std::to_string(expected) + " parameters (" + std::to_string(expected * 8) + " bytes)");
  }
  std::vector<double> flat(expected);
  for (std::size_t i = 0; i < expected; ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) {
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(payload[i * 8 + b])) << (8 * b);
    }
    flat[i] = std::bit_cast<double>(bits);
  }
  return flat;
}

void require_arch(const Descriptor& d, ModelKind want) {
  const std::string& arch = d.get("arch");
  if (arch != model_kind_name(want)) {
    throw CheckpointError("architecture mismatch: checkpoint holds '" + arch + "', expected '" +
                          std::string(model_kind_name(want)) + "'");
  }
}

}  // namespace

void save_checkpoint(const PoseModel& model, const std::filesystem::path& path) {
  const std::string desc = model.descriptor();
  std::string bytes(kMagic, kMagic + 4);
  put_u32(bytes, kCheckpointVersion);
  put_u32(bytes, static_cast<std::uint32_t>(desc.size()));
  bytes += desc;
  for (double v : model.network().flat_parameters()) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) bytes.push_back(static_cast<char>((bits >> (8 * b)) & 0xFFu));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw UsageError("failed writing checkpoint " + path.string());
}

MlpModel load_mlp_checkpoint(const std::filesystem::path& path) {
  const RawCheckpoint raw = read_raw(path);
  require_arch(raw.descriptor, ModelKind::kMlp);
  if (parse_layers(raw.descriptor.get("layers")) != MlpModel::architecture()) {
    throw CheckpointError("architecture mismatch: MLP checkpoint layers differ from dense(15,30)..dense(30,3)");
  }
  Network net(MlpModel::architecture(), {kMlpFeatureDim});
  net.set_flat_parameters(decode_payload(raw.payload, net.parameter_count()));
  return MlpModel(std::move(net));
}

HeatmapCnnModel load_cnn_checkpoint(const std::filesystem::path& path) {
  const RawCheckpoint raw = read_raw(path);
  require_arch(raw.descriptor, ModelKind::kCnn);
  const GridSize grid = parse_grid(raw.descriptor.get("grid"));
  double sigma = 0.0;
  if (!parse_double(raw.descriptor.get("sigma"), sigma) || !(sigma > 0.0)) {
    throw CheckpointError("bad sigma in checkpoint descriptor");
  }
  const auto layers = parse_layers(raw.descriptor.get("layers"));
  const auto* c1 = layers.size() == 13 ? std::get_if<Conv2dSpec>(&layers[0]) : nullptr;
  const auto* c2 = layers.size() == 13 ? std::get_if<Conv2dSpec>(&layers[3]) : nullptr;
  const auto* c3 = layers.size() == 13 ? std::get_if<Conv2dSpec>(&layers[6]) : nullptr;
  const auto* fc1 = layers.size() == 13 ? std::get_if<DenseSpec>(&layers[10]) : nullptr;
  if (!c1 || !c2 || !c3 || !fc1) throw CheckpointError("architecture mismatch: not a heatmap CNN layer stack");
  const CnnWidths widths{c1->out_channels, c2->out_channels, c3->out_channels, fc1->out};
  try {
    if (layers != HeatmapCnnModel::architecture(grid, widths)) {
      throw CheckpointError("architecture mismatch: CNN layer stack does not match its grid/widths");
    }
  } catch (const UsageError& e) {
    throw CheckpointError(std::string("architecture mismatch: ") + e.what());
  }
  Network net(layers, {kNumKeypoints, grid.height, grid.width});
  net.set_flat_parameters(decode_payload(raw.payload, net.parameter_count()));
  return HeatmapCnnModel(grid, sigma, widths, std::move(net));
}

std::unique_ptr<PoseModel> load_checkpoint(const std::filesystem::path& path) {
  const RawCheckpoint raw = read_raw(path);
  const std::string& arch = raw.descriptor.get("arch");
  if (arch == "mlp") return std::make_unique<MlpModel>(load_mlp_checkpoint(path));
  if (arch == "cnn") return std::make_unique<HeatmapCnnModel>(load_cnn_checkpoint(path));
  throw CheckpointError("unknown architecture '" + arch + "' in checkpoint");
}

}  // namespace headpose
