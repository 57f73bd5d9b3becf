#include "tbad/networks.hpp"

#include <cmath>
#include <mutex>

#include "tbad/error.hpp"

namespace tbad {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

std::string to_string(SegmenterArch a) { return a == SegmenterArch::unet3d ? "unet3d" : "swin_unetr"; }

SegmenterArch segmenter_arch_from(const std::string& s) {
  if (s == "unet3d") return SegmenterArch::unet3d;
  if (s == "swin_unetr") return SegmenterArch::swin_unetr;
  fail(ErrorCode::config, "unknown segmenter architecture '" + s + "'");
}

std::string to_string(ClassifierArch a) {
  return a == ClassifierArch::densenet_small ? "densenet_small" : "densenet_large";
}

ClassifierArch classifier_arch_from(const std::string& s) {
  if (s == "densenet_small") return ClassifierArch::densenet_small;
  if (s == "densenet_large") return ClassifierArch::densenet_large;
  fail(ErrorCode::config, "unknown classifier architecture '" + s + "'");
}

void SegmenterConfig::validate() const {
  require(in_channels >= 1, ErrorCode::config, "in_channels must be >= 1");
  require(out_classes >= 2, ErrorCode::config, "out_classes must be >= 2");
  require(depth >= 2 && depth <= 7, ErrorCode::config, "depth must lie in [2,7]");
  require(base_width >= 1, ErrorCode::config, "base_width must be >= 1");
  require(window_size >= 1, ErrorCode::config, "window_size must be >= 1");
}

void ClassifierConfig::validate() const {
  require(in_channels >= 1, ErrorCode::config, "in_channels must be >= 1");
  require(growth_rate >= 1, ErrorCode::config, "growth_rate must be >= 1");
  for (int b : blocks()) require(b >= 1, ErrorCode::config, "dense blocks need at least one layer");
}

std::vector<int> ClassifierConfig::blocks() const {
  if (!block_config.empty()) return block_config;
  // Toy presets with the 121 / 264 block proportions; full depth is {6,12,24,16} / {6,12,64,48}.
  return architecture == ClassifierArch::densenet_small ? std::vector<int>{2, 2, 4, 2} : std::vector<int>{2, 4, 8, 6};
}

void to_json(nlohmann::json& j, const SegmenterConfig& c) {
  j = {{"architecture", to_string(c.architecture)},
       {"in_channels", c.in_channels},
       {"out_classes", c.out_classes},
       {"base_width", c.base_width},
       {"depth", c.depth},
       {"window_size", c.window_size},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, SegmenterConfig& c) {
  c.architecture = segmenter_arch_from(j.at("architecture").get<std::string>());
  c.in_channels = j.at("in_channels").get<int>();
  c.out_classes = j.at("out_classes").get<int>();
  c.base_width = j.at("base_width").get<int>();
  c.depth = j.at("depth").get<int>();
  c.window_size = j.at("window_size").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
}

void to_json(nlohmann::json& j, const ClassifierConfig& c) {
  j = {{"architecture", to_string(c.architecture)},
       {"in_channels", c.in_channels},
       {"growth_rate", c.growth_rate},
       {"block_config", c.block_config},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ClassifierConfig& c) {
  c.architecture = classifier_arch_from(j.at("architecture").get<std::string>());
  c.in_channels = j.at("in_channels").get<int>();
  c.growth_rate = j.at("growth_rate").get<int>();
  c.block_config = j.at("block_config").get<std::vector<int>>();
  c.seed = j.at("seed").get<std::uint64_t>();
}

namespace {

// Global generator seeding is process-wide; construction is serialized.
std::mutex& init_mutex() {
  static std::mutex m;
  return m;
}

nn::Conv3d conv(int in, int out, int kernel, int stride = 1, bool bias = true) {
  return nn::Conv3d(nn::Conv3dOptions(in, out, kernel).stride(stride).padding(kernel / 2).bias(bias));
}

nn::InstanceNorm3d instance_norm(int channels) {
  return nn::InstanceNorm3d(nn::InstanceNorm3dOptions(channels).affine(true));
}

torch::Tensor lrelu(const torch::Tensor& x) { return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(0.01)); }

// conv-norm-lrelu twice
struct DoubleConvImpl : nn::Module {
  DoubleConvImpl(int in, int out)
      : conv1(register_module("conv1", conv(in, out, 3))),
        norm1(register_module("norm1", instance_norm(out))),
        conv2(register_module("conv2", conv(out, out, 3))),
        norm2(register_module("norm2", instance_norm(out))) {}

  torch::Tensor forward(torch::Tensor x) {
    x = lrelu(norm1(conv1(x)));
    return lrelu(norm2(conv2(x)));
  }

  nn::Conv3d conv1;
  nn::InstanceNorm3d norm1;
  nn::Conv3d conv2;
  nn::InstanceNorm3d norm2;
};
TORCH_MODULE(DoubleConv);

struct Unet3d : SegmentationNet {
  explicit Unet3d(const SegmenterConfig& cfg) {
    int ch = cfg.base_width;
    int in = cfg.in_channels;
    for (int level = 0; level < cfg.depth; ++level) {
      encoders.push_back(register_module("enc" + std::to_string(level), DoubleConv(in, ch)));
      widths.push_back(ch);
      in = ch;
      ch *= 2;
    }
    for (int level = cfg.depth - 2; level >= 0; --level) {
      const int deep = widths[level + 1], shallow = widths[level];
      ups.push_back(register_module("up" + std::to_string(level),
                                    nn::ConvTranspose3d(nn::ConvTranspose3dOptions(deep, shallow, 2).stride(2))));
      decoders.push_back(register_module("dec" + std::to_string(level), DoubleConv(2 * shallow, shallow)));
    }
    head = register_module("head", conv(widths[0], cfg.out_classes, 1));
  }

  torch::Tensor forward(torch::Tensor x) override {
    std::vector<torch::Tensor> skips;
    for (std::size_t l = 0; l < encoders.size(); ++l) {
      if (l > 0) x = F::max_pool3d(x, F::MaxPool3dFuncOptions(2));
      x = encoders[l]->forward(x);
      skips.push_back(x);
    }
    for (std::size_t i = 0; i < ups.size(); ++i) {
      const std::size_t level = encoders.size() - 2 - i;
      x = ups[i]->forward(x);
      x = decoders[i]->forward(torch::cat({x, skips[level]}, 1));
    }
    return head->forward(x);
  }

  std::vector<DoubleConv> encoders;
  std::vector<nn::ConvTranspose3d> ups;
  std::vector<DoubleConv> decoders;
  std::vector<int> widths;
  nn::Conv3d head{nullptr};
};

// Residual conv block used by the Swin-UNETR encoder/decoder paths.
struct ResBlockImpl : nn::Module {
  ResBlockImpl(int in, int out)
      : conv1(register_module("conv1", conv(in, out, 3, 1, false))),
        norm1(register_module("norm1", instance_norm(out))),
        conv2(register_module("conv2", conv(out, out, 3, 1, false))),
        norm2(register_module("norm2", instance_norm(out))) {
    if (in != out) {
      skip = register_module("skip", conv(in, out, 1, 1, false));
      skip_norm = register_module("skip_norm", instance_norm(out));
    }
  }

  torch::Tensor forward(torch::Tensor x) {
    torch::Tensor residual = x;
    if (!skip.is_empty()) residual = skip_norm(skip(x));
    x = lrelu(norm1(conv1(x)));
    x = norm2(conv2(x));
    return lrelu(x + residual);
  }

  nn::Conv3d conv1;
  nn::InstanceNorm3d norm1;
  nn::Conv3d conv2;
  nn::InstanceNorm3d norm2;
  nn::Conv3d skip{nullptr};
  nn::InstanceNorm3d skip_norm{nullptr};
};
TORCH_MODULE(ResBlock);

int head_count(int channels) {
  for (int h = std::max(1, channels / 8); h > 1; --h)
    if (channels % h == 0) return h;
  return 1;
}

struct WindowGeometry {
  std::array<std::int64_t, 3> window{};
  std::array<std::int64_t, 3> shift{};
};

// Relative position index into a (2w-1)^3 bias table for an effective window
// that may be smaller than the configured one along some axes.
torch::Tensor relative_index(const std::array<std::int64_t, 3>& win, std::int64_t configured) {
  const std::int64_t n = win[0] * win[1] * win[2];
  std::vector<std::int64_t> coords;
  coords.reserve(static_cast<std::size_t>(3 * n));
  for (std::int64_t d = 0; d < win[0]; ++d)
    for (std::int64_t h = 0; h < win[1]; ++h)
      for (std::int64_t w = 0; w < win[2]; ++w) coords.insert(coords.end(), {d, h, w});
  const std::int64_t span = 2 * configured - 1;
  std::vector<std::int64_t> index(static_cast<std::size_t>(n * n));
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < n; ++j) {
      const auto* a = &coords[static_cast<std::size_t>(3 * i)];
      const auto* b = &coords[static_cast<std::size_t>(3 * j)];
      index[static_cast<std::size_t>(i * n + j)] = (a[0] - b[0] + configured - 1) * span * span +
                                                   (a[1] - b[1] + configured - 1) * span +
                                                   (a[2] - b[2] + configured - 1);
    }
  return torch::tensor(index, torch::kInt64).view({n, n});
}

torch::Tensor window_partition(const torch::Tensor& x, const std::array<std::int64_t, 3>& w) {
  const auto n = x.size(0), d = x.size(1), h = x.size(2), wd = x.size(3), c = x.size(4);
  return x.view({n, d / w[0], w[0], h / w[1], w[1], wd / w[2], w[2], c})
      .permute({0, 1, 3, 5, 2, 4, 6, 7})
      .reshape({-1, w[0] * w[1] * w[2], c});
}

torch::Tensor window_reverse(const torch::Tensor& windows, const std::array<std::int64_t, 3>& w, std::int64_t n,
                             std::int64_t d, std::int64_t h, std::int64_t wd) {
  const auto c = windows.size(2);
  return windows.view({n, d / w[0], h / w[1], wd / w[2], w[0], w[1], w[2], c})
      .permute({0, 1, 4, 2, 5, 3, 6, 7})
      .reshape({n, d, h, wd, c});
}

// Shifted-window attention mask: tokens from different pre-shift regions
// never attend to each other.
torch::Tensor shift_mask(const std::array<std::int64_t, 3>& padded, const WindowGeometry& g) {
  auto img = torch::zeros({1, padded[0], padded[1], padded[2], 1});
  auto acc = img.accessor<float, 5>();
  auto region = [&](int axis, std::int64_t i) -> int {
    if (g.shift[axis] == 0) return 0;
    if (i < padded[axis] - g.window[axis]) return 0;
    if (i < padded[axis] - g.shift[axis]) return 1;
    return 2;
  };
  for (std::int64_t d = 0; d < padded[0]; ++d)
    for (std::int64_t h = 0; h < padded[1]; ++h)
      for (std::int64_t w = 0; w < padded[2]; ++w)
        acc[0][d][h][w][0] = static_cast<float>(region(0, d) * 9 + region(1, h) * 3 + region(2, w));
  auto m = window_partition(img, g.window).squeeze(-1);  // (nW, n)
  auto diff = m.unsqueeze(1) - m.unsqueeze(2);
  return torch::where(diff != 0, torch::full_like(diff, -100.0f), torch::zeros_like(diff));
}

struct WindowAttentionImpl : nn::Module {
  WindowAttentionImpl(int dim, int heads, int window)
      : heads(heads),
        window(window),
        qkv(register_module("qkv", nn::Linear(dim, 3 * dim))),
        proj(register_module("proj", nn::Linear(dim, dim))) {
    const std::int64_t span = 2 * window - 1;
    bias_table = register_parameter("bias_table", torch::randn({span * span * span, heads}) * 0.02);
  }

  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& index, const torch::Tensor& mask) {
    const auto b = x.size(0), n = x.size(1), c = x.size(2);
    const auto head_dim = c / heads;
    auto qkv_out = qkv(x).view({b, n, 3, heads, head_dim}).permute({2, 0, 3, 1, 4});
    auto q = qkv_out[0] * (1.0 / std::sqrt(static_cast<double>(head_dim)));
    auto k = qkv_out[1];
    auto v = qkv_out[2];
    auto attn = torch::matmul(q, k.transpose(-2, -1));
    auto bias = bias_table.index_select(0, index.reshape({-1})).view({n, n, heads}).permute({2, 0, 1});
    attn = attn + bias.unsqueeze(0);
    if (mask.defined()) {
      const auto nw = mask.size(0);
      attn = attn.view({b / nw, nw, heads, n, n}) + mask.unsqueeze(1).unsqueeze(0);
      attn = attn.view({b, heads, n, n});
    }
    attn = torch::softmax(attn, -1);
    auto out = torch::matmul(attn, v).transpose(1, 2).reshape({b, n, c});
    return proj(out);
  }

  int heads;
  int window;
  nn::Linear qkv;
  nn::Linear proj;
  torch::Tensor bias_table;
};
TORCH_MODULE(WindowAttention);

struct SwinBlockImpl : nn::Module {
  SwinBlockImpl(int dim, int heads, int window, bool shifted)
      : window(window),
        shifted(shifted),
        norm1(register_module("norm1", nn::LayerNorm(nn::LayerNormOptions({dim})))),
        attn(register_module("attn", WindowAttention(dim, heads, window))),
        norm2(register_module("norm2", nn::LayerNorm(nn::LayerNormOptions({dim})))),
        fc1(register_module("fc1", nn::Linear(dim, 4 * dim))),
        fc2(register_module("fc2", nn::Linear(4 * dim, dim))) {}

  // x: (N, D, H, W, C)
  torch::Tensor forward(const torch::Tensor& x) {
    const auto n = x.size(0), d = x.size(1), h = x.size(2), w = x.size(3);
    const std::array<std::int64_t, 3> dims{d, h, w};
    WindowGeometry g;
    for (int a = 0; a < 3; ++a) {
      g.window[a] = std::min<std::int64_t>(window, dims[a]);
      g.shift[a] = (shifted && dims[a] > window) ? window / 2 : 0;
    }
    std::array<std::int64_t, 3> padded{};
    for (int a = 0; a < 3; ++a) padded[a] = (dims[a] + g.window[a] - 1) / g.window[a] * g.window[a];

    auto y = norm1(x);
    if (padded != dims)
      y = F::pad(y, F::PadFuncOptions({0, 0, 0, padded[2] - w, 0, padded[1] - h, 0, padded[0] - d}));
    const bool any_shift = g.shift[0] || g.shift[1] || g.shift[2];
    torch::Tensor mask;
    if (any_shift) {
      y = torch::roll(y, {-g.shift[0], -g.shift[1], -g.shift[2]}, {1, 2, 3});
      mask = shift_mask(padded, g).to(y.dtype());
    }
    const auto index = relative_index(g.window, window);
    auto windows = attn(window_partition(y, g.window), index, mask);
    y = window_reverse(windows, g.window, n, padded[0], padded[1], padded[2]);
    if (any_shift) y = torch::roll(y, {g.shift[0], g.shift[1], g.shift[2]}, {1, 2, 3});
    if (padded != dims) y = y.slice(1, 0, d).slice(2, 0, h).slice(3, 0, w);
    auto out = x + y;
    return out + fc2(F::gelu(fc1(norm2(out))));
  }

  int window;
  bool shifted;
  nn::LayerNorm norm1;
  WindowAttention attn;
  nn::LayerNorm norm2;
  nn::Linear fc1, fc2;
};
TORCH_MODULE(SwinBlock);

struct PatchMergingImpl : nn::Module {
  explicit PatchMergingImpl(int dim)
      : norm(register_module("norm", nn::LayerNorm(nn::LayerNormOptions({8 * dim})))),
        reduce(register_module("reduce", nn::Linear(nn::LinearOptions(8 * dim, 2 * dim).bias(false)))) {}

  torch::Tensor forward(const torch::Tensor& x) {
    std::vector<torch::Tensor> parts;
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b)
        for (int c = 0; c < 2; ++c)
          parts.push_back(x.slice(1, a, torch::nullopt, 2).slice(2, b, torch::nullopt, 2).slice(3, c, torch::nullopt, 2));
    return reduce(norm(torch::cat(parts, -1)));
  }

  nn::LayerNorm norm;
  nn::Linear reduce;
};
TORCH_MODULE(PatchMerging);

// Level 0 is full resolution (conv encoder on the input); levels 1..depth-1
// carry Swin stages, the first fed by a stride-2 patch embedding and the rest
// by patch merging. Channels: F at levels 0 and 1, doubling afterwards.
struct SwinUnetr : SegmentationNet {
  explicit SwinUnetr(const SegmenterConfig& cfg) {
    const int f = cfg.base_width;
    const int levels = cfg.depth;
    widths.push_back(f);
    for (int l = 1; l < levels; ++l) widths.push_back(f << (l - 1));
    encoder0 = register_module("encoder0", ResBlock(cfg.in_channels, f));
    embed = register_module("embed", nn::Conv3d(nn::Conv3dOptions(cfg.in_channels, f, 2).stride(2)));
    for (int l = 1; l < levels; ++l) {
      const int ch = widths[l];
      if (l > 1) merges.push_back(register_module("merge" + std::to_string(l), PatchMerging(widths[l - 1])));
      auto stage = nn::ModuleList();
      stage->push_back(SwinBlock(ch, head_count(ch), cfg.window_size, false));
      stage->push_back(SwinBlock(ch, head_count(ch), cfg.window_size, true));
      stages.push_back(register_module("stage" + std::to_string(l), stage));
      encoders.push_back(register_module("encoder" + std::to_string(l), ResBlock(ch, ch)));
    }
    for (int l = levels - 2; l >= 0; --l) {
      ups.push_back(register_module(
          "up" + std::to_string(l),
          nn::ConvTranspose3d(nn::ConvTranspose3dOptions(widths[l + 1], widths[l], 2).stride(2))));
      decoders.push_back(register_module("decoder" + std::to_string(l), ResBlock(2 * widths[l], widths[l])));
    }
    head = register_module("head", conv(f, cfg.out_classes, 1));
  }

  torch::Tensor forward(torch::Tensor x) override {
    std::vector<torch::Tensor> skips;
    skips.push_back(encoder0->forward(x));
    auto h = embed(x).permute({0, 2, 3, 4, 1});  // channels last
    for (std::size_t s = 0; s < stages.size(); ++s) {
      if (s > 0) h = merges[s - 1]->forward(h);
      for (const auto& block : *stages[s]) h = block->as<SwinBlockImpl>()->forward(h);
      auto normed = F::layer_norm(h, F::LayerNormFuncOptions({h.size(-1)}));
      skips.push_back(encoders[s]->forward(normed.permute({0, 4, 1, 2, 3}).contiguous()));
    }
    auto y = skips.back();
    for (std::size_t i = 0; i < ups.size(); ++i) {
      const std::size_t level = skips.size() - 2 - i;
      y = ups[i]->forward(y);
      y = decoders[i]->forward(torch::cat({y, skips[level]}, 1));
    }
    return head->forward(y);
  }

  std::vector<int> widths;
  ResBlock encoder0{nullptr};
  nn::Conv3d embed{nullptr};
  std::vector<PatchMerging> merges;
  std::vector<nn::ModuleList> stages;
  std::vector<ResBlock> encoders;
  std::vector<nn::ConvTranspose3d> ups;
  std::vector<ResBlock> decoders;
  nn::Conv3d head{nullptr};
};

struct DenseLayerImpl : nn::Module {
  DenseLayerImpl(int in, int growth)
      : norm1(register_module("norm1", instance_norm(in))),
        conv1(register_module("conv1", conv(in, 4 * growth, 1, 1, false))),
        norm2(register_module("norm2", instance_norm(4 * growth))),
        conv2(register_module("conv2", conv(4 * growth, growth, 3, 1, false))) {}

  torch::Tensor forward(const torch::Tensor& x) {
    auto y = conv1(torch::relu(norm1(x)));
    y = conv2(torch::relu(norm2(y)));
    return torch::cat({x, y}, 1);
  }

  nn::InstanceNorm3d norm1;
  nn::Conv3d conv1;
  nn::InstanceNorm3d norm2;
  nn::Conv3d conv2;
};
TORCH_MODULE(DenseLayer);

struct TransitionImpl : nn::Module {
  TransitionImpl(int in, int out)
      : norm(register_module("norm", instance_norm(in))), reduce(register_module("conv", conv(in, out, 1, 1, false))) {}

  torch::Tensor forward(const torch::Tensor& x) {
    auto y = reduce(torch::relu(norm(x)));
    if (y.size(2) >= 2 && y.size(3) >= 2 && y.size(4) >= 2) y = F::avg_pool3d(y, F::AvgPool3dFuncOptions(2));
    return y;
  }

  nn::InstanceNorm3d norm;
  nn::Conv3d reduce;
};
TORCH_MODULE(Transition);

struct DenseNet3d : ClassificationNet {
  explicit DenseNet3d(const ClassifierConfig& cfg) {
    int ch = 2 * cfg.growth_rate;
    stem = register_module("stem", conv(cfg.in_channels, ch, 3, 2, false));
    stem_norm = register_module("stem_norm", instance_norm(ch));
    const auto blocks = cfg.blocks();
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      auto block = nn::Sequential();
      for (int l = 0; l < blocks[b]; ++l) {
        block->push_back(DenseLayer(ch, cfg.growth_rate));
        ch += cfg.growth_rate;
      }
      dense_blocks.push_back(register_module("block" + std::to_string(b), block));
      if (b + 1 < blocks.size()) {
        transitions.push_back(register_module("transition" + std::to_string(b), Transition(ch, ch / 2)));
        ch /= 2;
      }
    }
    final_norm = register_module("final_norm", instance_norm(ch));
    classifier = register_module("classifier", nn::Linear(ch, 1));
  }

  torch::Tensor forward(torch::Tensor x) override {
    x = torch::relu(stem_norm(stem(x)));
    if (x.size(2) >= 3 && x.size(3) >= 3 && x.size(4) >= 3)
      x = F::max_pool3d(x, F::MaxPool3dFuncOptions(3).stride(2).padding(1));
    for (std::size_t b = 0; b < dense_blocks.size(); ++b) {
      x = dense_blocks[b]->forward(x);
      if (b < transitions.size()) x = transitions[b]->forward(x);
    }
    x = torch::relu(final_norm(x));
    x = F::adaptive_avg_pool3d(x, F::AdaptiveAvgPool3dFuncOptions(1)).flatten(1);
    return classifier(x).squeeze(1);
  }

  nn::Conv3d stem{nullptr};
  nn::InstanceNorm3d stem_norm{nullptr};
  std::vector<nn::Sequential> dense_blocks;
  std::vector<Transition> transitions;
  nn::InstanceNorm3d final_norm{nullptr};
  nn::Linear classifier{nullptr};
};

torch::Tensor as_batch(const torch::Tensor& input, int channels, const char* what) {
  torch::Tensor x = input.dim() == 4 ? input.unsqueeze(0) : input;
  require(x.dim() == 5, ErrorCode::shape, std::string(what) + " expects (N,C,D,H,W) input");
  require(x.size(1) == channels, ErrorCode::contract,
          std::string(what) + " expects " + std::to_string(channels) + " input channels, got " +
              std::to_string(x.size(1)));
  return x;
}

}  // namespace

Segmenter::Segmenter(const SegmenterConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  std::lock_guard lock(init_mutex());
  torch::manual_seed(cfg_.seed);
  if (cfg_.architecture == SegmenterArch::unet3d)
    net_ = std::make_shared<Unet3d>(cfg_);
  else
    net_ = std::make_shared<SwinUnetr>(cfg_);
}

torch::Tensor Segmenter::forward(const torch::Tensor& input) {
  const torch::Tensor x = as_batch(input, cfg_.in_channels, "segmenter");
  const auto m = spatial_multiple();
  for (int d = 2; d < 5; ++d)
    require(x.size(d) % m == 0, ErrorCode::shape,
            "spatial extent " + std::to_string(x.size(d)) + " is not a multiple of " + std::to_string(m));
  return net_->forward(x);
}

Classifier::Classifier(const ClassifierConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  std::lock_guard lock(init_mutex());
  torch::manual_seed(cfg_.seed);
  net_ = std::make_shared<DenseNet3d>(cfg_);
}

torch::Tensor Classifier::forward(const torch::Tensor& input) {
  return net_->forward(as_batch(input, cfg_.in_channels, "classifier"));
}

std::unique_ptr<Segmenter> build_segmenter(const SegmenterConfig& cfg) { return std::make_unique<Segmenter>(cfg); }
std::unique_ptr<Classifier> build_classifier(const ClassifierConfig& cfg) { return std::make_unique<Classifier>(cfg); }

double parameter_checksum(const torch::nn::Module& module) {
  torch::NoGradGuard no_grad;
  double sum = 0.0;
  double k = 1.0;
  for (const auto& p : module.parameters()) {
    sum += k * p.to(torch::kFloat64).sum().item<double>() + p.to(torch::kFloat64).abs().sum().item<double>();
    k += 1.0;
  }
  return sum;
}

}  // namespace tbad
