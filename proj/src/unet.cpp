#include "fixseg/unet.hpp"

#include <torch/torch.h>

#include <cmath>
#include <cstring>
#include <fstream>

#include "fixseg/random.hpp"

namespace fixseg {

using nlohmann::json;

namespace {

constexpr char kCheckpointMagic[8] = {'F', 'X', 'S', 'G', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

// Encoder level i, the bottleneck, and decoder level i as (in, out) pairs of a double conv.
struct BlockShapes {
  std::vector<std::pair<int, int>> encoder;  // depth + 1 entries, last one is the bottleneck
  std::vector<std::pair<int, int>> decoder;  // index i = level i
};

BlockShapes block_shapes(const UNetConfig& cfg) {
  const auto& w = cfg.channel_widths;
  const int d = cfg.depth();
  BlockShapes s;
  s.encoder.push_back({cfg.in_bands, w[0]});
  for (int i = 1; i < d; ++i) s.encoder.push_back({w[i - 1], w[i]});
  s.encoder.push_back({w[d - 1], w[d - 1]});
  s.decoder.resize(d);
  int prev = w[d - 1];
  for (int i = d - 1; i >= 0; --i) {
    const int out = i > 0 ? w[i - 1] : w[0];
    s.decoder[i] = {prev + w[i], out};
    prev = out;
  }
  return s;
}

torch::nn::Sequential double_conv(int in, int out, bool batch_norm) {
  torch::nn::Sequential seq;
  seq->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).padding(1)));
  if (batch_norm) seq->push_back(torch::nn::BatchNorm2d(out));
  seq->push_back(torch::nn::ReLU());
  seq->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(out, out, 3).padding(1)));
  if (batch_norm) seq->push_back(torch::nn::BatchNorm2d(out));
  seq->push_back(torch::nn::ReLU());
  return seq;
}

struct NetImpl : torch::nn::Module {
  explicit NetImpl(const UNetConfig& cfg) {
    const auto shapes = block_shapes(cfg);
    for (std::size_t i = 0; i < shapes.encoder.size(); ++i) {
      encoder.push_back(register_module("enc" + std::to_string(i),
                                        double_conv(shapes.encoder[i].first, shapes.encoder[i].second, cfg.batch_norm)));
    }
    for (std::size_t i = 0; i < shapes.decoder.size(); ++i) {
      decoder.push_back(register_module("dec" + std::to_string(i),
                                        double_conv(shapes.decoder[i].first, shapes.decoder[i].second, cfg.batch_norm)));
    }
    head = register_module("head", torch::nn::Conv2d(torch::nn::Conv2dOptions(cfg.channel_widths[0], cfg.num_classes, 1)));
  }

  torch::Tensor forward(torch::Tensor x) {
    const std::size_t depth = decoder.size();
    std::vector<torch::Tensor> skips;
    for (std::size_t i = 0; i < depth; ++i) {
      x = encoder[i]->forward(x);
      skips.push_back(x);
      x = torch::max_pool2d(x, 2);
    }
    x = encoder[depth]->forward(x);
    namespace F = torch::nn::functional;
    for (std::size_t k = depth; k-- > 0;) {
      const auto& skip = skips[k];
      x = F::interpolate(x, F::InterpolateFuncOptions()
                                .size(std::vector<int64_t>{skip.size(2), skip.size(3)})
                                .mode(torch::kBilinear)
                                .align_corners(false));
      x = decoder[k]->forward(torch::cat({skip, x}, 1));
    }
    return head->forward(x);
  }

  std::vector<torch::nn::Sequential> encoder;
  std::vector<torch::nn::Sequential> decoder;
  torch::nn::Conv2d head{nullptr};
};
TORCH_MODULE(Net);

// Kaiming-uniform (fan-in, ReLU gain) drawn from the library RNG so initialization does not
// depend on the torch generator.
void init_weights(Net& net, std::uint64_t seed) {
  torch::NoGradGuard no_grad;
  Rng rng = Rng::derive(seed, 0x1417);
  for (auto& module : net->modules(/*include_self=*/false)) {
    if (auto* conv = module->as<torch::nn::Conv2d>()) {
      auto w = conv->weight;
      const auto fan_in = w.size(1) * w.size(2) * w.size(3);
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      auto cpu = torch::empty_like(w);
      auto* p = cpu.data_ptr<float>();
      for (int64_t i = 0; i < cpu.numel(); ++i) p[i] = static_cast<float>(rng.uniform(-bound, bound));
      w.copy_(cpu);
      conv->bias.zero_();
    } else if (auto* bn = module->as<torch::nn::BatchNorm2d>()) {
      bn->weight.fill_(1.0);
      bn->bias.zero_();
    }
  }
}

// Every float tensor whose value determines the output: parameters, then float buffers.
std::vector<torch::Tensor> state_tensors(const Net& net) {
  std::vector<torch::Tensor> out;
  for (const auto& p : net->parameters()) out.push_back(p);
  for (const auto& b : net->buffers()) {
    if (b.scalar_type() == torch::kFloat) out.push_back(b);
  }
  return out;
}

torch::Tensor to_tensor(std::span<const Image> images) {
  const auto& first = images.front();
  auto t = torch::empty({static_cast<int64_t>(images.size()), first.bands(), first.height(), first.width()});
  auto* dst = t.data_ptr<float>();
  const std::size_t n = first.data().size();
  for (const auto& img : images) {
    if (img.bands() != first.bands() || img.height() != first.height() || img.width() != first.width()) {
      throw ShapeError("all images of a forward batch must share one shape");
    }
    std::memcpy(dst, img.data().data(), n * sizeof(float));
    dst += n;
  }
  return t;
}

std::vector<ScoreMap> to_scores(const torch::Tensor& out) {
  auto t = out.detach().contiguous();
  const auto n = t.size(0), c = t.size(1), h = t.size(2), w = t.size(3);
  std::vector<ScoreMap> maps;
  const float* src = t.data_ptr<float>();
  for (int64_t i = 0; i < n; ++i) {
    ScoreMap m(static_cast<int>(c), static_cast<int>(h), static_cast<int>(w));
    auto d = m.data();
    for (std::size_t k = 0; k < d.size(); ++k) d[k] = src[k];
    src += d.size();
    maps.push_back(std::move(m));
  }
  return maps;
}

torch::Tensor grads_to_tensor(const std::vector<ScoreMap>& grads, const torch::Tensor& like) {
  if (static_cast<int64_t>(grads.size()) != like.size(0)) throw ShapeError("gradient count differs from batch size");
  auto t = torch::empty_like(like);
  float* dst = t.data_ptr<float>();
  const std::size_t per = static_cast<std::size_t>(like.size(1) * like.size(2) * like.size(3));
  for (const auto& g : grads) {
    if (g.data().size() != per) throw ShapeError("gradient map has the wrong shape");
    for (std::size_t k = 0; k < per; ++k) dst[k] = static_cast<float>(g.data()[k]);
    dst += per;
  }
  return t;
}

void write_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }
void write_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }
template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw DataError("truncated checkpoint");
  return v;
}

struct RawCheckpoint {
  CheckpointInfo info;
  std::vector<float> weights;
};

RawCheckpoint read_checkpoint(const std::filesystem::path& file, bool with_weights) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw NoCheckpointError("cannot open checkpoint " + file.string());
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0) throw DataError(file.string() + " is not a checkpoint");
  const auto version = read_pod<std::uint32_t>(is);
  if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  const auto header_len = read_pod<std::uint64_t>(is);
  std::string header(header_len, '\0');
  is.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!is) throw DataError("truncated checkpoint header");
  const json h = json::parse(header);
  RawCheckpoint raw;
  raw.info.config = UNetConfig::from_json(h.at("config"));
  raw.info.epoch = h.at("epoch").get<int>();
  raw.info.val_miou = h.at("val_miou").get<double>();
  if (with_weights) {
    const auto count = read_pod<std::uint64_t>(is);
    raw.weights.resize(count);
    is.read(reinterpret_cast<char*>(raw.weights.data()), static_cast<std::streamsize>(count * sizeof(float)));
    if (!is) throw DataError("truncated checkpoint weights");
  }
  return raw;
}

}  // namespace

// --- config and budget -----------------------------------------------------------------------

void UNetConfig::validate() const {
  if (in_bands <= 0 || num_classes <= 0) throw ConfigError("in_bands and num_classes must be positive");
  if (channel_widths.empty()) throw ConfigError("channel_widths must not be empty");
  for (int w : channel_widths) {
    if (w <= 0) throw ConfigError("channel widths must be positive");
  }
}

UNetConfig UNetConfig::reference() { return UNetConfig{}; }

json UNetConfig::to_json() const {
  return {{"in_bands", in_bands},
          {"num_classes", num_classes},
          {"channel_widths", channel_widths},
          {"batch_norm", batch_norm},
          {"init_seed", init_seed}};
}

UNetConfig UNetConfig::from_json(const json& j) {
  UNetConfig c;
  c.in_bands = j.at("in_bands").get<int>();
  c.num_classes = j.at("num_classes").get<int>();
  c.channel_widths = j.at("channel_widths").get<std::vector<int>>();
  c.batch_norm = j.value("batch_norm", false);
  c.init_seed = j.value("init_seed", std::uint64_t{0});
  c.validate();
  return c;
}

std::vector<ConvLayerShape> conv_layers(const UNetConfig& cfg) {
  cfg.validate();
  const auto shapes = block_shapes(cfg);
  std::vector<ConvLayerShape> out;
  const int d = cfg.depth();
  for (int i = 0; i <= d; ++i) {
    const auto [in, o] = shapes.encoder[i];
    out.push_back({in, o, 3, 1 << i});
    out.push_back({o, o, 3, 1 << i});
  }
  for (int i = d - 1; i >= 0; --i) {
    const auto [in, o] = shapes.decoder[i];
    out.push_back({in, o, 3, 1 << i});
    out.push_back({o, o, 3, 1 << i});
  }
  out.push_back({cfg.channel_widths[0], cfg.num_classes, 1, 1});
  return out;
}

std::int64_t conv_parameter_count(const ConvLayerShape& l) {
  return static_cast<std::int64_t>(l.kernel) * l.kernel * l.in_channels * l.out_channels + l.out_channels;
}

json ModelBudgetReport::to_json() const {
  return {{"param_count", param_count},
          {"macs", macs},
          {"flops", flops},
          {"gmacs", static_cast<double>(macs) / 1e9},
          {"gflops", flops / 1e9},
          {"serialized_size", serialized_size},
          {"input", {input_height, input_width}}};
}

ModelBudgetReport budget_report(const UNetConfig& cfg, int height, int width) {
  ModelBudgetReport r;
  r.input_height = height;
  r.input_width = width;
  for (const auto& l : conv_layers(cfg)) {
    const std::int64_t weights = static_cast<std::int64_t>(l.kernel) * l.kernel * l.in_channels * l.out_channels;
    r.param_count += conv_parameter_count(l);
    const std::int64_t pixels = static_cast<std::int64_t>(height / l.scale) * (width / l.scale);
    r.macs += weights * pixels;
  }
  if (cfg.batch_norm) {
    // two BN layers per double conv, each with weight and bias
    const auto layers = conv_layers(cfg);
    for (std::size_t i = 0; i + 1 < layers.size(); ++i) r.param_count += 2 * layers[i].out_channels;
  }
  r.flops = 2.0 * static_cast<double>(r.macs);
  // magic + version + header length + header + weight count + float32 weights
  const std::int64_t header = static_cast<std::int64_t>(json{{"config", cfg.to_json()}, {"epoch", 0}, {"val_miou", 0.0}}.dump().size());
  r.serialized_size = 8 + 4 + 8 + header + 8 + 4 * r.param_count;
  return r;
}

// --- model -----------------------------------------------------------------------------------

struct UNet::Impl {
  UNetConfig cfg;
  Net net;
  std::unique_ptr<torch::optim::Adam> optimizer;

  explicit Impl(const UNetConfig& c) : cfg(c), net(c) {}

  void check_shape(int h, int w) const {
    const int m = 1 << cfg.depth();
    if (h % m != 0 || w % m != 0) {
      throw ShapeError("input " + std::to_string(h) + "x" + std::to_string(w) + " is not divisible by " +
                       std::to_string(m));
    }
  }

  torch::Tensor batch(std::span<const Image> images) const {
    if (images.empty()) throw ShapeError("empty batch");
    if (images.front().bands() != cfg.in_bands) {
      throw ShapeError("expected " + std::to_string(cfg.in_bands) + " bands, got " +
                       std::to_string(images.front().bands()));
    }
    check_shape(images.front().height(), images.front().width());
    return to_tensor(images);
  }
};

UNet::UNet(const UNetConfig& cfg) {
  cfg.validate();
  impl_ = std::make_unique<Impl>(cfg);
  init_weights(impl_->net, cfg.init_seed);
}

UNet::~UNet() = default;
UNet::UNet(UNet&&) noexcept = default;
UNet& UNet::operator=(UNet&&) noexcept = default;

const UNetConfig& UNet::config() const { return impl_->cfg; }

std::vector<ScoreMap> UNet::forward(std::span<const Image> images) const {
  if (images.empty()) return {};
  torch::NoGradGuard no_grad;
  impl_->net->eval();
  return to_scores(impl_->net->forward(impl_->batch(images)));
}

void UNet::enable_training(const AdamOptions& opts) {
  impl_->optimizer = std::make_unique<torch::optim::Adam>(
      impl_->net->parameters(),
      torch::optim::AdamOptions(opts.lr).betas({opts.beta1, opts.beta2}).eps(opts.eps));
}

bool UNet::training_enabled() const { return impl_->optimizer != nullptr; }

void UNet::optimize(const std::vector<std::vector<Image>>& groups, const GradientFn& loss_grad) {
  if (!impl_->optimizer) throw ConfigError("enable_training must be called before optimize");
  impl_->net->train();
  impl_->optimizer->zero_grad();
  std::vector<torch::Tensor> outputs;
  std::vector<std::vector<ScoreMap>> scores;
  for (const auto& g : groups) {
    if (g.empty()) {
      outputs.emplace_back();
      scores.emplace_back();
      continue;
    }
    outputs.push_back(impl_->net->forward(impl_->batch(g)));
    scores.push_back(to_scores(outputs.back()));
  }
  const auto grads = loss_grad(scores);
  if (grads.size() != groups.size()) throw ShapeError("gradient groups differ from input groups");
  std::vector<torch::Tensor> roots, seeds;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    if (!outputs[i].defined()) continue;
    roots.push_back(outputs[i]);
    seeds.push_back(grads_to_tensor(grads[i], outputs[i]));
  }
  if (roots.empty()) return;
  torch::autograd::backward(roots, seeds);
  impl_->optimizer->step();
}

std::int64_t UNet::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& p : impl_->net->parameters()) n += p.numel();
  return n;
}

std::vector<float> UNet::flat_weights() const {
  std::vector<float> out;
  for (const auto& t : state_tensors(impl_->net)) {
    auto c = t.detach().contiguous();
    const float* p = c.data_ptr<float>();
    out.insert(out.end(), p, p + c.numel());
  }
  return out;
}

void UNet::load_flat_weights(std::span<const float> weights) {
  torch::NoGradGuard no_grad;
  const auto tensors = state_tensors(impl_->net);
  std::size_t needed = 0;
  for (const auto& t : tensors) needed += static_cast<std::size_t>(t.numel());
  if (weights.size() != needed) {
    throw ShapeError("weight vector holds " + std::to_string(weights.size()) + " values, model needs " +
                     std::to_string(needed));
  }
  std::size_t offset = 0;
  for (auto t : tensors) {
    auto src = torch::from_blob(const_cast<float*>(weights.data() + offset), t.sizes(), torch::kFloat);
    t.copy_(src);
    offset += static_cast<std::size_t>(t.numel());
  }
}

void UNet::save_checkpoint(const std::filesystem::path& file, int epoch, double val_miou) const {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  const std::string header = json{{"config", impl_->cfg.to_json()}, {"epoch", epoch}, {"val_miou", val_miou}}.dump();
  const auto weights = flat_weights();
  std::ofstream os(file, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write checkpoint " + file.string());
  os.write(kCheckpointMagic, 8);
  write_u32(os, kCheckpointVersion);
  write_u64(os, header.size());
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  write_u64(os, weights.size());
  os.write(reinterpret_cast<const char*>(weights.data()), static_cast<std::streamsize>(weights.size() * sizeof(float)));
  if (!os) throw DataError("failed writing checkpoint " + file.string());
}

CheckpointInfo UNet::load_checkpoint(const std::filesystem::path& file) {
  auto raw = read_checkpoint(file, true);
  if (!(raw.info.config.channel_widths == impl_->cfg.channel_widths) || raw.info.config.in_bands != impl_->cfg.in_bands ||
      raw.info.config.num_classes != impl_->cfg.num_classes || raw.info.config.batch_norm != impl_->cfg.batch_norm) {
    throw ConfigError("checkpoint architecture does not match the model");
  }
  load_flat_weights(raw.weights);
  return raw.info;
}

CheckpointInfo read_checkpoint_info(const std::filesystem::path& file) { return read_checkpoint(file, false).info; }

UNet load_model(const std::filesystem::path& file) {
  auto raw = read_checkpoint(file, true);
  UNet model(raw.info.config);
  model.load_flat_weights(raw.weights);
  return model;
}

}  // namespace fixseg
