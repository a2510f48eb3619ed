#pragma once

#include <array>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "cpga/nn.hpp"

namespace cpga::models {

using json = nlohmann::json;

enum class ArchKind : int {
  NumericOnly = 0,
  ImageOnly,
  ConcatFusion,
  AttentionFusion,
  LateFilm,
  HierFilm,
};

inline constexpr std::array<ArchKind, 6> kAllArchs = {
    ArchKind::NumericOnly, ArchKind::ImageOnly, ArchKind::ConcatFusion,
    ArchKind::AttentionFusion, ArchKind::LateFilm, ArchKind::HierFilm,
};

inline const char* arch_name(ArchKind a) {
  switch (a) {
    case ArchKind::NumericOnly: return "numeric_only";
    case ArchKind::ImageOnly: return "image_only";
    case ArchKind::ConcatFusion: return "concat_fusion";
    case ArchKind::AttentionFusion: return "attention_fusion";
    case ArchKind::LateFilm: return "late_film";
    case ArchKind::HierFilm: return "hier_film";
  }
  throw ConfigError("unknown architecture kind");
}

inline ArchKind parse_arch(const std::string& name) {
  const std::string n = to_lower(trim(name));
  for (ArchKind a : kAllArchs)
    if (n == arch_name(a)) return a;
  throw ConfigError("unknown architecture: '" + name + "'");
}

inline bool arch_uses_images(ArchKind a) { return a != ArchKind::NumericOnly; }
inline bool arch_uses_numeric(ArchKind a) { return a != ArchKind::ImageOnly; }
inline bool arch_is_film(ArchKind a) {
  return a == ArchKind::LateFilm || a == ArchKind::HierFilm;
}

struct ModelConfig {
  ArchKind arch = ArchKind::LateFilm;
  int depth = 32, height = 32, width = 32;  // input stack dims
  int conv1x1_channels = 64;                // spatial head bottleneck
  std::uint64_t init_seed = 0;

  void validate() const {
    if (arch_uses_images(arch)) {
      if (depth < 16)
        throw ConfigError("stack depth " + std::to_string(depth) +
                          " below the 16 required for four poolings");
      if (height < 16)
        throw ConfigError("stack height " + std::to_string(height) +
                          " below the 16 required for four poolings");
      if (width < 16)
        throw ConfigError("stack width " + std::to_string(width) +
                          " below the 16 required for four poolings");
    }
  }
};

template <class T>
struct ModelInput {
  const std::array<T, 6>* numeric = nullptr;  // standardized features
  const Tensor<T>* orig = nullptr;            // [1, D, H, W]
  const Tensor<T>* conv = nullptr;            // [1, D, H, W]
};

inline constexpr int kCnnChannels[5] = {1, 32, 64, 128, 256};

namespace detail {

template <class T>
Tensor<T> concat_vec(const std::vector<const Tensor<T>*>& parts) {
  int total = 0;
  for (const auto* p : parts) total += static_cast<int>(p->size());
  Tensor<T> out({total});
  std::ptrdiff_t at = 0;
  for (const auto* p : parts) {
    std::copy(p->v.begin(), p->v.end(), out.v.begin() + at);
    at += static_cast<std::ptrdiff_t>(p->size());
  }
  return out;
}

template <class T>
Tensor<T> slice_vec(const Tensor<T>& x, int from, int count) {
  Tensor<T> out({count});
  std::copy(x.v.begin() + from, x.v.begin() + from + count, out.v.begin());
  return out;
}

}  // namespace detail

/// Concatenate two [C, D, H, W] maps along the channel axis.
template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> out({a.shape[0] + b.shape[0], a.shape[1], a.shape[2], a.shape[3]});
  std::copy(a.v.begin(), a.v.end(), out.v.begin());
  std::copy(b.v.begin(), b.v.end(), out.v.begin() + static_cast<std::ptrdiff_t>(a.size()));
  return out;
}

// --------------------------------------------------------------- the model

template <class T>
class Model {
 public:
  ModelConfig cfg;

  explicit Model(const ModelConfig& config) : cfg(config) {
    cfg.validate();
    const std::uint64_t seed = cfg.init_seed;

    if (arch_uses_numeric(cfg.arch)) {
      num_fc1_ = std::make_unique<nn::Linear<T>>("num.fc1", 6, 64, seed);
      num_fc2_ = std::make_unique<nn::Linear<T>>("num.fc2", 64, 32, seed);
    }
    if (arch_uses_images(cfg.arch)) {
      for (int s = 0; s < 2; ++s) {
        const std::string sn = "stream" + std::to_string(s);
        for (int b = 0; b < 4; ++b) {
          auto& blk = streams_[s].blocks[static_cast<std::size_t>(b)];
          blk.conv = std::make_unique<nn::Conv3d<T>>(sn + ".conv" + std::to_string(b + 1),
                                                     kCnnChannels[b], kCnnChannels[b + 1], seed);
          blk.norm = std::make_unique<nn::InstanceNorm3d<T>>(sn + ".norm" + std::to_string(b + 1),
                                                             kCnnChannels[b + 1]);
          if (cfg.arch == ArchKind::HierFilm) {
            const int c = kCnnChannels[b + 1];
            blk.film_proj = std::make_unique<nn::Linear<T>>(sn + ".film" + std::to_string(b + 1),
                                                            32, 2 * c, seed);
            for (int i = 0; i < c; ++i) {
              blk.film_proj->b[static_cast<std::size_t>(i)] = T(1);      // scale half
              blk.film_proj->b[static_cast<std::size_t>(c + i)] = T(0);  // shift half
            }
          }
        }
      }
    }

    const int S = spatial_sites();
    const bool flat = cfg.arch == ArchKind::ImageOnly || cfg.arch == ArchKind::ConcatFusion ||
                      cfg.arch == ArchKind::AttentionFusion;
    if (flat) {
      streams_[0].flat_fc = std::make_unique<nn::Linear<T>>("stream0.flat", 256 * S, 128, seed);
      streams_[1].flat_fc = std::make_unique<nn::Linear<T>>("stream1.flat", 256 * S, 128, seed);
    }
    switch (cfg.arch) {
      case ArchKind::NumericOnly:
        head_fc1_ = std::make_unique<nn::Linear<T>>("head.fc1", 32, 16, seed);
        head_fc2_ = std::make_unique<nn::Linear<T>>("head.fc2", 16, 1, seed);
        break;
      case ArchKind::ImageOnly:
        head_fc1_ = std::make_unique<nn::Linear<T>>("head.fc1", 256, 128, seed);
        head_fc2_ = std::make_unique<nn::Linear<T>>("head.fc2", 128, 1, seed);
        break;
      case ArchKind::ConcatFusion:
        head_fc1_ = std::make_unique<nn::Linear<T>>("head.fc1", 288, 128, seed);
        head_fc2_ = std::make_unique<nn::Linear<T>>("head.fc2", 128, 1, seed);
        break;
      case ArchKind::AttentionFusion:
        q_proj_ = std::make_unique<nn::Linear<T>>("attn.q_in", 32, 256, seed);
        attn_ = std::make_unique<nn::SingleSiteAttention<T>>("attn", 256, 8, seed);
        head_fc1_ = std::make_unique<nn::Linear<T>>("head.fc1", 288, 128, seed);
        head_fc2_ = std::make_unique<nn::Linear<T>>("head.fc2", 128, 1, seed);
        break;
      case ArchKind::LateFilm:
        gamma_proj_ = std::make_unique<nn::Linear<T>>("film.gamma", 32, 512, seed);
        beta_proj_ = std::make_unique<nn::Linear<T>>("film.beta", 32, 512, seed);
        gamma_proj_->b.fill(T(1));
        beta_proj_->b.fill(T(0));
        [[fallthrough]];
      case ArchKind::HierFilm:
        head_conv_ = std::make_unique<nn::Conv1x1<T>>("head.conv1x1", 512, cfg.conv1x1_channels,
                                                      seed);
        head_fca_ = std::make_unique<nn::Linear<T>>("head.fca", cfg.conv1x1_channels * S, 128,
                                                    seed);
        head_fcb_ = std::make_unique<nn::Linear<T>>("head.fcb", 128, 1, seed);
        break;
    }
  }

  // ------------------------------------------------------------- forward

  T forward(const ModelInput<T>& in) {
    validate_input(in);
    Tensor<T> f_num;
    if (arch_uses_numeric(cfg.arch)) {
      Tensor<T> z({6});
      for (std::size_t i = 0; i < 6; ++i) z[i] = (*in.numeric)[i];
      f_num = num_fc2_->forward(num_relu_.forward(num_fc1_->forward(z)));
      f_num_cache_ = f_num;
    }

    switch (cfg.arch) {
      case ArchKind::NumericOnly: {
        const Tensor<T> h = head_relu_.forward(head_fc1_->forward(f_num));
        return head_fc2_->forward(h)[0];
      }
      case ArchKind::ImageOnly: {
        const Tensor<T> vo = encode_flat(0, *in.orig);
        const Tensor<T> vc = encode_flat(1, *in.conv);
        cat_cache_ = detail::concat_vec<T>({&vo, &vc});
        const Tensor<T> h = head_relu_.forward(head_fc1_->forward(cat_cache_));
        return head_fc2_->forward(h)[0];
      }
      case ArchKind::ConcatFusion: {
        const Tensor<T> vo = encode_flat(0, *in.orig);
        const Tensor<T> vc = encode_flat(1, *in.conv);
        cat_cache_ = detail::concat_vec<T>({&vo, &vc, &f_num});
        const Tensor<T> h = head_relu_.forward(head_fc1_->forward(cat_cache_));
        return head_fc2_->forward(h)[0];
      }
      case ArchKind::AttentionFusion: {
        const Tensor<T> vo = encode_flat(0, *in.orig);
        const Tensor<T> vc = encode_flat(1, *in.conv);
        visual_cache_ = detail::concat_vec<T>({&vo, &vc});
        const Tensor<T> q = q_proj_->forward(f_num);
        const Tensor<T> att = attn_->forward(q, visual_cache_);
        Tensor<T> refined = visual_cache_;
        for (std::size_t i = 0; i < refined.size(); ++i) refined[i] += att[i];
        cat_cache_ = detail::concat_vec<T>({&refined, &f_num});
        const Tensor<T> h = head_relu_.forward(head_fc1_->forward(cat_cache_));
        return head_fc2_->forward(h)[0];
      }
      case ArchKind::LateFilm: {
        const Tensor<T> mo = encode_spatial(0, *in.orig);
        const Tensor<T> mc = encode_spatial(1, *in.conv);
        map_cache_ = concat_channels(mo, mc);
        gamma_cache_ = gamma_proj_->forward(f_num);
        beta_cache_ = beta_proj_->forward(f_num);
        const Tensor<T> mod = nn::film_modulate(map_cache_, gamma_cache_, beta_cache_);
        return spatial_head_forward(mod);
      }
      case ArchKind::HierFilm: {
        const Tensor<T> mo = encode_spatial(0, *in.orig);
        const Tensor<T> mc = encode_spatial(1, *in.conv);
        const Tensor<T> cat = concat_channels(mo, mc);
        return spatial_head_forward(cat);
      }
    }
    throw ConfigError("unreachable arch");
  }

  // ------------------------------------------------------------ backward

  void backward(T dy) {
    Tensor<T> g1({1});
    g1[0] = dy;
    if (input_grads_enabled_) {
      grad_orig_.resize({1, cfg.depth, cfg.height, cfg.width});
      grad_conv_.resize({1, cfg.depth, cfg.height, cfg.width});
    }
    switch (cfg.arch) {
      case ArchKind::NumericOnly: {
        const Tensor<T> gh = head_relu_.backward(head_fc2_->backward(g1));
        backward_numeric(head_fc1_->backward(gh));
        return;
      }
      case ArchKind::ImageOnly: {
        const Tensor<T> gh = head_relu_.backward(head_fc2_->backward(g1));
        const Tensor<T> gcat = head_fc1_->backward(gh);
        backward_flat(0, detail::slice_vec(gcat, 0, 128));
        backward_flat(1, detail::slice_vec(gcat, 128, 128));
        return;
      }
      case ArchKind::ConcatFusion: {
        const Tensor<T> gh = head_relu_.backward(head_fc2_->backward(g1));
        const Tensor<T> gcat = head_fc1_->backward(gh);
        backward_flat(0, detail::slice_vec(gcat, 0, 128));
        backward_flat(1, detail::slice_vec(gcat, 128, 128));
        backward_numeric(detail::slice_vec(gcat, 256, 32));
        return;
      }
      case ArchKind::AttentionFusion: {
        const Tensor<T> gh = head_relu_.backward(head_fc2_->backward(g1));
        const Tensor<T> gcat = head_fc1_->backward(gh);
        const Tensor<T> g_refined = detail::slice_vec(gcat, 0, 256);
        // residual: the gradient reaches f_visual directly and through the
        // attention value path; the query path carries none.
        Tensor<T> g_visual = g_refined;
        const Tensor<T> g_kv = attn_->backward(g_refined);
        for (std::size_t i = 0; i < g_visual.size(); ++i) g_visual[i] += g_kv[i];
        backward_flat(0, detail::slice_vec(g_visual, 0, 128));
        backward_flat(1, detail::slice_vec(g_visual, 128, 128));
        backward_numeric(detail::slice_vec(gcat, 256, 32));
        return;
      }
      case ArchKind::LateFilm: {
        const Tensor<T> g_mod = spatial_head_backward(g1);
        Tensor<T> ggamma({512}), gbeta({512});
        const Tensor<T> g_map =
            nn::film_backward(map_cache_, gamma_cache_, g_mod, ggamma, gbeta);
        Tensor<T> g_num = gamma_proj_->backward(ggamma);
        const Tensor<T> g_num2 = beta_proj_->backward(gbeta);
        for (std::size_t i = 0; i < g_num.size(); ++i) g_num[i] += g_num2[i];
        backward_split_spatial(g_map);
        backward_numeric(g_num);
        return;
      }
      case ArchKind::HierFilm: {
        const Tensor<T> g_map = spatial_head_backward(g1);
        g_num_accum_.resize({32});
        g_num_accum_.fill(T(0));
        backward_split_spatial(g_map);
        backward_numeric(g_num_accum_);
        return;
      }
    }
  }

  // ------------------------------------------------- component access

  /// 32-d physics vector from standardized features.
  Tensor<T> numeric_encode(const std::array<T, 6>& z) {
    if (!num_fc1_) throw ConfigError("architecture has no numeric encoder");
    Tensor<T> zx({6});
    for (std::size_t i = 0; i < 6; ++i) zx[i] = z[i];
    return num_fc2_->forward(num_relu_.forward(num_fc1_->forward(zx)));
  }

  /// Spatial feature map [256, D/16, H/16, W/16] of one stream.
  Tensor<T> encode_spatial(int stream, const Tensor<T>& x) {
    Stream& s = streams_[stream];
    Tensor<T> h = x;
    for (int b = 0; b < 4; ++b) {
      Block& blk = s.blocks[static_cast<std::size_t>(b)];
      h = blk.relu.forward(blk.norm->forward(blk.conv->forward(h)));
      if (blk.film_proj) {
        const int c = kCnnChannels[b + 1];
        const Tensor<T> gb = blk.film_proj->forward(f_num_cache_);
        blk.film_gamma = detail::slice_vec(gb, 0, c);
        const Tensor<T> beta = detail::slice_vec(gb, c, c);
        blk.film_x = h;
        h = nn::film_modulate(h, blk.film_gamma, beta);
      }
      h = blk.pool.forward(h);
    }
    return h;
  }

  /// 128-d flattened stream encoding.
  Tensor<T> encode_flat(int stream, const Tensor<T>& x) {
    Tensor<T> map = encode_spatial(stream, x);
    Tensor<T> flat({static_cast<int>(map.size())});
    flat.v = map.v;
    return streams_[stream].flat_fc->forward(flat);
  }

  /// Scale/shift vectors of the late-gated architecture.
  std::pair<Tensor<T>, Tensor<T>> film_vectors(const std::array<T, 6>& z) {
    if (cfg.arch != ArchKind::LateFilm) throw ConfigError("film_vectors: not a late-gated model");
    const Tensor<T> f = numeric_encode(z);
    return {gamma_proj_->forward(f), beta_proj_->forward(f)};
  }

  /// Per-stream, per-block scale vectors of the hierarchical architecture.
  std::vector<Tensor<T>> hier_gamma_vectors(const std::array<T, 6>& z) {
    if (cfg.arch != ArchKind::HierFilm)
      throw ConfigError("hier_gamma_vectors: not a hierarchical model");
    const Tensor<T> f = numeric_encode(z);
    std::vector<Tensor<T>> out;
    for (auto& s : streams_) {
      for (int b = 0; b < 4; ++b) {
        const int c = kCnnChannels[b + 1];
        const Tensor<T> gb = s.blocks[static_cast<std::size_t>(b)].film_proj->forward(f);
        out.push_back(detail::slice_vec(gb, 0, c));
      }
    }
    return out;
  }

  /// Head applied to a 512-channel spatial map (used by the gate-identity
  /// checks, which compose encoders and head without the modulation).
  T spatial_head_forward(const Tensor<T>& map) {
    head_in_shape_ = map.shape;
    Tensor<T> h = head_conv_->forward(map);
    head_conv_shape_ = h.shape;
    Tensor<T> flat({static_cast<int>(h.size())});
    flat.v = h.v;
    const Tensor<T> dropped = head_dropout_.forward(flat);
    return head_fcb_->forward(head_fca_->forward(dropped))[0];
  }

  // ------------------------------------------------------------ plumbing

  std::vector<nn::ParamRef<T>> params() {
    std::vector<nn::ParamRef<T>> out;
    if (num_fc1_) num_fc1_->params(out);
    if (num_fc2_) num_fc2_->params(out);
    for (auto& s : streams_) {
      for (auto& b : s.blocks) {
        if (b.conv) b.conv->params(out);
        if (b.norm) b.norm->params(out);
        if (b.film_proj) b.film_proj->params(out);
      }
      if (s.flat_fc) s.flat_fc->params(out);
    }
    if (q_proj_) q_proj_->params(out);
    if (attn_) attn_->params(out);
    if (gamma_proj_) gamma_proj_->params(out);
    if (beta_proj_) beta_proj_->params(out);
    if (head_conv_) head_conv_->params(out);
    if (head_fca_) head_fca_->params(out);
    if (head_fcb_) head_fcb_->params(out);
    if (head_fc1_) head_fc1_->params(out);
    if (head_fc2_) head_fc2_->params(out);
    return out;
  }

  std::size_t param_count() {
    std::size_t n = 0;
    for (const auto& p : params()) n += p.value->size();
    return n;
  }

  void zero_grads() {
    for (auto& p : params()) p.grad->fill(T(0));
  }

  void set_training(bool on) { head_dropout_.training = on; }
  void reseed_dropout(std::uint64_t seed, const std::string& tag) {
    head_dropout_.reseed(seed, tag);
  }

  void enable_input_grads(bool on) { input_grads_enabled_ = on; }
  const Tensor<T>& grad_orig() const { return grad_orig_; }
  const Tensor<T>& grad_conv() const { return grad_conv_; }

  /// Layer-by-layer shape table (computed, not executed).
  std::string describe() const {
    std::string out;
    auto row = [&](const std::string& a, const std::string& b, std::size_t n) {
      out += a;
      out.append(a.size() < 28 ? 28 - a.size() : 1, ' ');
      out += b;
      out.append(b.size() < 24 ? 24 - b.size() : 1, ' ');
      out += n ? std::to_string(n) : std::string("-");
      out += "\n";
    };
    out += std::string("architecture: ") + arch_name(cfg.arch) + "\n";
    out += "layer                       output                  params\n";
    if (arch_uses_numeric(cfg.arch)) {
      row("num.fc1 + relu", "[64]", 6 * 64 + 64);
      row("num.fc2", "[32]", 64 * 32 + 32);
    }
    if (arch_uses_images(cfg.arch)) {
      int d = cfg.depth, h = cfg.height, w = cfg.width;
      for (int b = 0; b < 4; ++b) {
        const int ci = kCnnChannels[b], co = kCnnChannels[b + 1];
        const std::string shape = "[" + std::to_string(co) + "," + std::to_string(d) + "," +
                                  std::to_string(h) + "," + std::to_string(w) + "]";
        row("streamX.conv" + std::to_string(b + 1) + " 3x3x3", shape,
            static_cast<std::size_t>(co) * ci * 27 + co);
        row("streamX.norm" + std::to_string(b + 1) + " + relu", shape, 2 * static_cast<std::size_t>(co));
        if (cfg.arch == ArchKind::HierFilm)
          row("streamX.film" + std::to_string(b + 1), "[" + std::to_string(2 * co) + "]",
              static_cast<std::size_t>(32) * 2 * co + 2 * co);
        d /= 2;
        h /= 2;
        w /= 2;
        row("streamX.pool" + std::to_string(b + 1),
            "[" + std::to_string(co) + "," + std::to_string(d) + "," + std::to_string(h) + "," +
                std::to_string(w) + "]",
            0);
      }
      out += "(two parallel streams; per-stream parameters listed once)\n";
      const int S = spatial_sites();
      const bool flat = cfg.arch == ArchKind::ImageOnly || cfg.arch == ArchKind::ConcatFusion ||
                        cfg.arch == ArchKind::AttentionFusion;
      if (flat) row("streamX.flat", "[128]", static_cast<std::size_t>(256) * S * 128 + 128);
      if (cfg.arch == ArchKind::AttentionFusion) {
        row("attn.q_in", "[256]", 32 * 256 + 256);
        row("attn (8 heads, kv len 1)", "[256]", 4 * (256 * 256 + 256));
      }
      if (cfg.arch == ArchKind::LateFilm) {
        row("film.gamma", "[512]", 32 * 512 + 512);
        row("film.beta", "[512]", 32 * 512 + 512);
      }
      if (arch_is_film(cfg.arch)) {
        const std::string ms = "[" + std::to_string(cfg.conv1x1_channels) + " x " +
                               std::to_string(S) + " sites]";
        row("head.conv1x1", ms, static_cast<std::size_t>(512) * cfg.conv1x1_channels +
                                    static_cast<std::size_t>(cfg.conv1x1_channels));
        row("head.fca (after dropout)", "[128]",
            static_cast<std::size_t>(cfg.conv1x1_channels) * S * 128 + 128);
        row("head.fcb", "[1]", 129);
      }
    }
    if (head_fc1_) {
      row("head.fc1 + relu", "[" + std::to_string(head_fc1_->out) + "]",
          static_cast<std::size_t>(head_fc1_->in) * head_fc1_->out + head_fc1_->out);
      row("head.fc2", "[1]", static_cast<std::size_t>(head_fc2_->in) + 1);
    }
    return out;
  }

 private:
  struct Block {
    std::unique_ptr<nn::Conv3d<T>> conv;
    std::unique_ptr<nn::InstanceNorm3d<T>> norm;
    nn::ReLU<T> relu;
    nn::MaxPool3d<T> pool;
    std::unique_ptr<nn::Linear<T>> film_proj;  // hierarchical gating only
    Tensor<T> film_x, film_gamma;
  };
  struct Stream {
    std::array<Block, 4> blocks;
    std::unique_ptr<nn::Linear<T>> flat_fc;
  };

  std::unique_ptr<nn::Linear<T>> num_fc1_, num_fc2_;
  nn::ReLU<T> num_relu_;
  Stream streams_[2];
  std::unique_ptr<nn::Linear<T>> head_fc1_, head_fc2_;
  nn::ReLU<T> head_relu_;
  std::unique_ptr<nn::Conv1x1<T>> head_conv_;
  nn::Dropout<T> head_dropout_;
  std::unique_ptr<nn::Linear<T>> head_fca_, head_fcb_;
  std::unique_ptr<nn::Linear<T>> gamma_proj_, beta_proj_;
  std::unique_ptr<nn::Linear<T>> q_proj_;
  std::unique_ptr<nn::SingleSiteAttention<T>> attn_;

  Tensor<T> f_num_cache_, cat_cache_, visual_cache_, map_cache_, gamma_cache_, beta_cache_;
  Tensor<T> g_num_accum_;
  std::vector<int> head_in_shape_, head_conv_shape_;
  bool input_grads_enabled_ = false;
  Tensor<T> grad_orig_, grad_conv_;

  int spatial_sites() const { return (cfg.depth / 16) * (cfg.height / 16) * (cfg.width / 16); }

  void validate_input(const ModelInput<T>& in) const {
    if (arch_uses_numeric(cfg.arch) && in.numeric == nullptr)
      throw ConfigError(std::string(arch_name(cfg.arch)) + " requires numeric features");
    if (arch_uses_images(cfg.arch)) {
      if (in.orig == nullptr || in.conv == nullptr)
        throw ConfigError(std::string(arch_name(cfg.arch)) + " requires both image stacks");
      for (const Tensor<T>* t : {in.orig, in.conv}) {
        if (t->shape != std::vector<int>{1, cfg.depth, cfg.height, cfg.width})
          throw ConfigError("input stack shape mismatch");
      }
    } else if (in.orig != nullptr || in.conv != nullptr) {
      throw ConfigError(std::string(arch_name(cfg.arch)) + " accepts no image stacks");
    }
  }

  Tensor<T> spatial_head_backward(const Tensor<T>& g1) {
    Tensor<T> gflat = head_fca_->backward(head_fcb_->backward(g1));
    gflat = head_dropout_.backward(gflat);
    Tensor<T> gconv(head_conv_shape_);
    gconv.v = gflat.v;
    return head_conv_->backward(gconv);
  }

  void backward_numeric(const Tensor<T>& g_num) {
    if (!num_fc1_) return;
    (void)num_fc1_->backward(num_relu_.backward(num_fc2_->backward(g_num)));
  }

  void backward_flat(int stream, const Tensor<T>& g128) {
    Stream& s = streams_[stream];
    Tensor<T> gflat = s.flat_fc->backward(g128);
    const int S = spatial_sites();
    const int side_d = cfg.depth / 16, side_h = cfg.height / 16, side_w = cfg.width / 16;
    (void)S;
    Tensor<T> gmap({256, side_d, side_h, side_w});
    gmap.v = gflat.v;
    backward_stream(stream, gmap);
  }

  /// Split a 512-channel gradient map and push through both streams.
  void backward_split_spatial(const Tensor<T>& g_map) {
    const int half = static_cast<int>(g_map.size() / 2);
    Tensor<T> ga({256, g_map.shape[1], g_map.shape[2], g_map.shape[3]});
    Tensor<T> gb(ga.shape);
    std::copy(g_map.v.begin(), g_map.v.begin() + half, ga.v.begin());
    std::copy(g_map.v.begin() + half, g_map.v.end(), gb.v.begin());
    backward_stream(0, ga);
    backward_stream(1, gb);
  }

  void backward_stream(int stream, const Tensor<T>& g_out) {
    Stream& s = streams_[stream];
    Tensor<T> g = g_out;
    for (int b = 3; b >= 0; --b) {
      Block& blk = s.blocks[static_cast<std::size_t>(b)];
      g = blk.pool.backward(g);
      if (blk.film_proj) {
        const int c = kCnnChannels[b + 1];
        Tensor<T> ggamma({c}), gbeta({c});
        g = nn::film_backward(blk.film_x, blk.film_gamma, g, ggamma, gbeta);
        const Tensor<T> gcat = detail::concat_vec<T>({&ggamma, &gbeta});
        const Tensor<T> g_num = blk.film_proj->backward(gcat);
        if (g_num_accum_.size() != g_num.size()) g_num_accum_.resize({32});
        for (std::size_t i = 0; i < g_num.size(); ++i) g_num_accum_[i] += g_num[i];
      }
      g = blk.relu.backward(g);
      g = blk.norm->backward(g);
      const bool want_input = (b > 0) || input_grads_enabled_;
      g = blk.conv->backward(g, want_input);
    }
    if (input_grads_enabled_) {
      (stream == 0 ? grad_orig_ : grad_conv_) = g;
    }
  }
};

// --------------------------------------------------------------- storage

inline constexpr char kCheckpointMagic[9] = "CPGACKP1";

/// Versioned container: magic, JSON descriptor, then float32 little-endian
/// parameter blobs ordered by parameter name.
template <class T>
void save_checkpoint(Model<T>& model, const std::string& path, const json& extra_meta = {}) {
  auto params = model.params();
  std::sort(params.begin(), params.end(),
            [](const auto& a, const auto& b) { return a.name < b.name; });

  json meta;
  meta["format"] = 1;
  meta["arch"] = arch_name(model.cfg.arch);
  meta["input"] = {model.cfg.depth, model.cfg.height, model.cfg.width};
  meta["conv1x1_channels"] = model.cfg.conv1x1_channels;
  meta["init_seed"] = model.cfg.init_seed;
  json plist = json::array();
  for (const auto& p : params) {
    json jp;
    jp["name"] = p.name;
    jp["shape"] = p.value->shape;
    plist.push_back(jp);
  }
  meta["params"] = plist;
  if (!extra_meta.is_null()) {
    for (auto it = extra_meta.begin(); it != extra_meta.end(); ++it) meta[it.key()] = it.value();
  }
  const std::string mtext = meta.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write checkpoint: " + path);
  f.write(kCheckpointMagic, 8);
  const std::uint64_t len = mtext.size();
  f.write(reinterpret_cast<const char*>(&len), 8);
  f.write(mtext.data(), static_cast<std::streamsize>(mtext.size()));
  for (const auto& p : params) {
    for (const T x : p.value->v) {
      const float v = static_cast<float>(x);
      f.write(reinterpret_cast<const char*>(&v), 4);
    }
  }
}

template <class T>
std::pair<Model<T>, json> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint: " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::string(magic, 8) != std::string(kCheckpointMagic, 8))
    throw DataError("bad checkpoint magic: " + path);
  std::uint64_t len = 0;
  f.read(reinterpret_cast<char*>(&len), 8);
  std::string mtext(len, '\0');
  f.read(mtext.data(), static_cast<std::streamsize>(len));
  if (!f) throw DataError("truncated checkpoint header: " + path);
  const json meta = json::parse(mtext);

  ModelConfig cfg;
  cfg.arch = parse_arch(meta.at("arch").get<std::string>());
  cfg.depth = meta.at("input")[0].get<int>();
  cfg.height = meta.at("input")[1].get<int>();
  cfg.width = meta.at("input")[2].get<int>();
  cfg.conv1x1_channels = meta.at("conv1x1_channels").get<int>();
  cfg.init_seed = meta.at("init_seed").get<std::uint64_t>();
  Model<T> model(cfg);

  auto params = model.params();
  std::sort(params.begin(), params.end(),
            [](const auto& a, const auto& b) { return a.name < b.name; });
  std::size_t pi = 0;
  for (const auto& jp : meta.at("params")) {
    if (pi >= params.size()) throw DataError("checkpoint has extra parameters");
    auto& p = params[pi++];
    if (jp.at("name").get<std::string>() != p.name)
      throw DataError("checkpoint parameter mismatch: " + jp.at("name").get<std::string>() +
                      " vs " + p.name);
    for (T& x : p.value->v) {
      float v = 0;
      f.read(reinterpret_cast<char*>(&v), 4);
      x = static_cast<T>(v);
    }
  }
  if (pi != params.size()) throw DataError("checkpoint is missing parameters");
  if (!f) throw DataError("truncated checkpoint blob: " + path);
  return {std::move(model), meta};
}

}  // namespace cpga::models
