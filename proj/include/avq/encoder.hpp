#pragma once

// Toy vision transformer: patch embedding, transformer blocks with four tap
// locations each, class-token head with an optional low-rank adapter.
//
// A partition (block, location) marks where edge computation stops. The tensor
// at that location is replaced by its AlignedVQ reconstruction and, for
// mid-block locations, also becomes the residual stream for the rest of the
// block; everything downstream is a function of that one tensor. The
// monolithic and the split paths both go through block_until / block_resume,
// so they execute the same arithmetic.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "avq/alignedvq.hpp"
#include "avq/autodiff.hpp"
#include "avq/init.hpp"
#include "avq/rng.hpp"
#include "avq/tensor.hpp"

namespace avq {

enum class TapLocation { none, ln1, attn, ln2, ffn };
enum class BlockVariant { pre_norm, post_norm };

inline constexpr std::array<TapLocation, 4> kTapLocations = {TapLocation::ln1, TapLocation::attn, TapLocation::ln2,
                                                             TapLocation::ffn};

inline std::string_view to_string(TapLocation loc) {
  switch (loc) {
    case TapLocation::ln1: return "LN1";
    case TapLocation::attn: return "ATTN";
    case TapLocation::ln2: return "LN2";
    case TapLocation::ffn: return "FFN";
    case TapLocation::none: break;
  }
  return "NONE";
}

inline TapLocation parse_tap_location(std::string_view s) {
  for (auto loc : {TapLocation::none, TapLocation::ln1, TapLocation::attn, TapLocation::ln2, TapLocation::ffn}) {
    std::string_view name = to_string(loc);
    if (s.size() == name.size() &&
        std::equal(s.begin(), s.end(), name.begin(), [](char a, char b) { return std::toupper(a) == b; }))
      return loc;
  }
  throw Error(ErrorKind::config, "unknown tap location '" + std::string(s) + "'");
}

inline std::string_view to_string(BlockVariant v) { return v == BlockVariant::pre_norm ? "pre_norm" : "post_norm"; }

inline BlockVariant parse_block_variant(std::string_view s) {
  if (s == "pre_norm") return BlockVariant::pre_norm;
  if (s == "post_norm") return BlockVariant::post_norm;
  throw Error(ErrorKind::config, "unknown block variant '" + std::string(s) + "'");
}

struct PartitionSpec {
  std::size_t block_index = 0;
  TapLocation location = TapLocation::none;

  bool active() const { return location != TapLocation::none; }
  friend bool operator==(const PartitionSpec&, const PartitionSpec&) = default;
};

struct ModelConfig {
  std::size_t image_size = 32;
  std::size_t patch_size = 8;
  std::size_t image_channels = 1;
  std::size_t embed_dim = 64;
  std::size_t depth = 4;
  std::size_t heads = 4;
  std::size_t num_classes = 10;
  BlockVariant variant = BlockVariant::pre_norm;
  bool embed_norm = true;  // LayerNorm over the embedded tokens before block 0
  std::uint64_t seed = 0;

  std::size_t patches_per_side() const { return image_size / patch_size; }
  std::size_t num_patches() const { return patches_per_side() * patches_per_side(); }
  std::size_t num_tokens() const { return num_patches() + 1; }
  std::size_t patch_dim() const { return patch_size * patch_size * image_channels; }

  void validate() const {
    require(patch_size >= 1 && image_size % patch_size == 0, ErrorKind::config, "patch_size must divide image_size");
    require(embed_dim >= 1 && heads >= 1 && embed_dim % heads == 0, ErrorKind::config, "heads must divide embed_dim");
    require(depth >= 1 && num_classes >= 2 && image_channels >= 1, ErrorKind::config, "invalid model dimensions");
  }

  void check_partition(const PartitionSpec& p) const {
    require(p.block_index < depth, ErrorKind::config,
            "partition block " + std::to_string(p.block_index) + " out of range for depth " + std::to_string(depth));
  }
};

enum class ParamGroup { backbone, dlp, adapter };

using ParamVisitor = std::function<void(const std::string&, Var&, ParamGroup)>;

struct BlockParams {
  Var ln1_gain, ln1_bias;
  Var wq, wk, wv, wo;
  Var ln2_gain, ln2_bias;
  Var w1, b1, w2, b2;
  std::size_t heads = 1;
  BlockVariant variant = BlockVariant::pre_norm;

  static BlockParams init(std::size_t c, std::size_t heads, BlockVariant variant, Rng& rng) {
    BlockParams p;
    p.ln1_gain = Var::parameter(Tensor({c}, 1.0f));
    p.ln1_bias = Var::parameter(Tensor({c}));
    p.wq = Var::parameter(xavier_uniform(rng, c, c));
    p.wk = Var::parameter(xavier_uniform(rng, c, c));
    p.wv = Var::parameter(xavier_uniform(rng, c, c));
    p.wo = Var::parameter(xavier_uniform(rng, c, c));
    p.ln2_gain = Var::parameter(Tensor({c}, 1.0f));
    p.ln2_bias = Var::parameter(Tensor({c}));
    p.w1 = Var::parameter(xavier_uniform(rng, c, 4 * c));
    p.b1 = Var::parameter(Tensor({4 * c}));
    p.w2 = Var::parameter(xavier_uniform(rng, 4 * c, c));
    p.b2 = Var::parameter(Tensor({c}));
    p.heads = heads;
    p.variant = variant;
    return p;
  }

  void visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + "ln1.gain", ln1_gain, ParamGroup::backbone);
    fn(prefix + "ln1.bias", ln1_bias, ParamGroup::backbone);
    fn(prefix + "attn.wq", wq, ParamGroup::backbone);
    fn(prefix + "attn.wk", wk, ParamGroup::backbone);
    fn(prefix + "attn.wv", wv, ParamGroup::backbone);
    fn(prefix + "attn.wo", wo, ParamGroup::backbone);
    fn(prefix + "ln2.gain", ln2_gain, ParamGroup::backbone);
    fn(prefix + "ln2.bias", ln2_bias, ParamGroup::backbone);
    fn(prefix + "ffn.w1", w1, ParamGroup::backbone);
    fn(prefix + "ffn.b1", b1, ParamGroup::backbone);
    fn(prefix + "ffn.w2", w2, ParamGroup::backbone);
    fn(prefix + "ffn.b2", b2, ParamGroup::backbone);
  }
};

struct PatchEmbedParams {
  Var weight;  // [patch_dim, C]
  Var bias;    // [C]
  Var cls;     // [C]
  Var pos;     // [N, C]
  Var ln_gain;  // [C] LayerNorm over the embedded tokens, ahead of block 0
  Var ln_bias;  // [C]
};

struct HeadParams {
  Var weight;  // [C, classes]
  Var bias;    // [classes]
};

// Additive low-rank update A·B on the head weight, scaled by alpha.
struct LowRankAdapter {
  Var a;  // [C, r]
  Var b;  // [r, classes]
  std::size_t rank = 0;
  float alpha = 1.0f;

  static LowRankAdapter init(std::size_t c, std::size_t rank, std::size_t out, float alpha, std::uint64_t seed) {
    require(rank >= 1 && rank <= c, ErrorKind::config,
            "adapter rank must be in [1, C], got " + std::to_string(rank));
    Rng rng(seed);
    return {Var::parameter(xavier_uniform(rng, c, rank)), Var::parameter(Tensor({rank, out})), rank, alpha};
  }
};

// images [B,H,W,ch] -> patches [B,P,ps*ps*ch], patches in raster order.
inline Tensor patchify(const Tensor& images, const ModelConfig& cfg) {
  require_dims(images.rank() == 4 && images.dim(1) == cfg.image_size && images.dim(2) == cfg.image_size &&
                   images.dim(3) == cfg.image_channels,
               "images must be [B," + std::to_string(cfg.image_size) + "," + std::to_string(cfg.image_size) + "," +
                   std::to_string(cfg.image_channels) + "], got " + shape_str(images.shape()));
  const std::size_t bsz = images.dim(0), hw = cfg.image_size, ps = cfg.patch_size, ch = cfg.image_channels;
  const std::size_t side = cfg.patches_per_side();
  Tensor out({bsz, cfg.num_patches(), cfg.patch_dim()});
  auto o = out.data().begin();
  for (std::size_t b = 0; b < bsz; ++b)
    for (std::size_t py = 0; py < side; ++py)
      for (std::size_t px = 0; px < side; ++px)
        for (std::size_t y = 0; y < ps; ++y)
          for (std::size_t x = 0; x < ps; ++x)
            for (std::size_t k = 0; k < ch; ++k)
              *o++ = images[((b * hw + py * ps + y) * hw + px * ps + x) * ch + k];
  return out;
}

// Patches projected, class token prepended, positional embedding added.
inline Var patch_embed(const Tensor& images, const PatchEmbedParams& p, const ModelConfig& cfg) {
  Var patches = Var::constant(patchify(images, cfg));
  Var tokens = add_bias(matmul(patches, p.weight), p.bias);
  return add_bias(prepend_token(p.cls, tokens), p.pos);
}

// Block-0 input: patch embeddings, normalized when cfg.embed_norm (as in CLIP-style ViTs).
inline Var embed_tokens(const Tensor& images, const PatchEmbedParams& p, const ModelConfig& cfg) {
  Var x = patch_embed(images, p, cfg);
  return cfg.embed_norm ? layernorm(x, p.ln_gain, p.ln_bias) : x;
}

inline Var attention_sublayer(const Var& h, const BlockParams& p) {
  return matmul(attention_core(matmul(h, p.wq), matmul(h, p.wk), matmul(h, p.wv), p.heads), p.wo);
}

inline Var ffn_sublayer(const Var& h, const BlockParams& p) {
  return add_bias(matmul(gelu_act(add_bias(matmul(h, p.w1), p.b1)), p.w2), p.b2);
}

inline Var ln1(const Var& x, const BlockParams& p) { return layernorm(x, p.ln1_gain, p.ln1_bias); }
inline Var ln2(const Var& x, const BlockParams& p) { return layernorm(x, p.ln2_gain, p.ln2_bias); }

// Values at the four tap locations during an untapped pass.
struct BlockTaps {
  std::map<TapLocation, Tensor> at;
};

// Plain block, optionally recording the tensor at every tap location.
inline Var block_plain(const Var& x, const BlockParams& p, BlockTaps* taps = nullptr) {
  auto rec = [taps](TapLocation loc, const Var& v) {
    if (taps) taps->at[loc] = v.value();
  };
  if (p.variant == BlockVariant::pre_norm) {
    Var h1 = ln1(x, p);
    rec(TapLocation::ln1, h1);
    Var x1 = add(x, attention_sublayer(h1, p));
    rec(TapLocation::attn, x1);
    Var h2 = ln2(x1, p);
    rec(TapLocation::ln2, h2);
    Var x2 = add(x1, ffn_sublayer(h2, p));
    rec(TapLocation::ffn, x2);
    return x2;
  }
  Var u = add(x, attention_sublayer(x, p));
  rec(TapLocation::attn, u);
  Var x1 = ln1(u, p);
  rec(TapLocation::ln1, x1);
  Var v = add(x1, ffn_sublayer(x1, p));
  rec(TapLocation::ffn, v);
  Var x2 = ln2(v, p);
  rec(TapLocation::ln2, x2);
  return x2;
}

// Runs the block up to and including `loc`; returns the tensor at that point.
inline Var block_until(const Var& x, const BlockParams& p, TapLocation loc) {
  require(loc != TapLocation::none, ErrorKind::config, "block_until needs a tap location");
  if (p.variant == BlockVariant::pre_norm) {
    Var h1 = ln1(x, p);
    if (loc == TapLocation::ln1) return h1;
    Var x1 = add(x, attention_sublayer(h1, p));
    if (loc == TapLocation::attn) return x1;
    Var h2 = ln2(x1, p);
    if (loc == TapLocation::ln2) return h2;
    return add(x1, ffn_sublayer(h2, p));
  }
  Var u = add(x, attention_sublayer(x, p));
  if (loc == TapLocation::attn) return u;
  Var x1 = ln1(u, p);
  if (loc == TapLocation::ln1) return x1;
  Var v = add(x1, ffn_sublayer(x1, p));
  if (loc == TapLocation::ffn) return v;
  return ln2(v, p);
}

// Finishes the block from the (substituted) tensor at `loc`.
inline Var block_resume(const Var& t, const BlockParams& p, TapLocation loc) {
  require(loc != TapLocation::none, ErrorKind::config, "block_resume needs a tap location");
  if (p.variant == BlockVariant::pre_norm) {
    switch (loc) {
      case TapLocation::ln1: {
        Var x1 = add(t, attention_sublayer(t, p));
        return add(x1, ffn_sublayer(ln2(x1, p), p));
      }
      case TapLocation::attn: return add(t, ffn_sublayer(ln2(t, p), p));
      case TapLocation::ln2: return add(t, ffn_sublayer(t, p));
      default: return t;
    }
  }
  switch (loc) {
    case TapLocation::attn: {
      Var x1 = ln1(t, p);
      return ln2(add(x1, ffn_sublayer(x1, p)), p);
    }
    case TapLocation::ln1: return ln2(add(t, ffn_sublayer(t, p)), p);
    case TapLocation::ffn: return ln2(t, p);
    default: return t;
  }
}

struct BlockOutput {
  Var output;
  BlockTaps taps;                     // filled only for untapped passes
  std::optional<AlignedVQOutput> vq;  // present when a tap was applied
};

inline BlockOutput block_forward(const Var& x, const BlockParams& p, TapLocation tap = TapLocation::none,
                                 const AlignedVQModule* vq = nullptr) {
  BlockOutput out;
  if (tap == TapLocation::none) {
    out.output = block_plain(x, p, &out.taps);
    return out;
  }
  require(vq != nullptr, ErrorKind::config, "tap location set without an AlignedVQ module");
  auto q = alignedvq_forward(block_until(x, p, tap), *vq);
  out.output = block_resume(q.output, p, tap);
  out.vq = std::move(q);
  return out;
}

inline Var head_forward(const Var& pooled, const HeadParams& head, const LowRankAdapter* adapter = nullptr) {
  Var logits = add_bias(matmul(pooled, head.weight), head.bias);
  if (!adapter) return logits;
  require(adapter->rank <= pooled.value().cols(), ErrorKind::config, "adapter rank exceeds channel count");
  return add(logits, mul_scalar(matmul(matmul(pooled, adapter->a), adapter->b), adapter->alpha));
}

struct Model {
  ModelConfig cfg;
  PatchEmbedParams embed;
  std::vector<BlockParams> blocks;
  HeadParams head;
  std::optional<LowRankAdapter> adapter;
  std::optional<AlignedVQModule> vq;
  PartitionSpec partition;

  static Model init(const ModelConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    Model m;
    m.cfg = cfg;
    const std::size_t c = cfg.embed_dim;
    m.embed.weight = Var::parameter(xavier_uniform(rng, cfg.patch_dim(), c));
    m.embed.bias = Var::parameter(Tensor({c}));
    m.embed.cls = Var::parameter(normal_tensor(rng, {c}, 0.02));
    m.embed.pos = Var::parameter(normal_tensor(rng, {cfg.num_tokens(), c}, 0.02));
    m.embed.ln_gain = Var::parameter(Tensor({c}, 1.0f));
    m.embed.ln_bias = Var::parameter(Tensor({c}));
    for (std::size_t i = 0; i < cfg.depth; ++i) m.blocks.push_back(BlockParams::init(c, cfg.heads, cfg.variant, rng));
    m.head.weight = Var::parameter(xavier_uniform(rng, c, cfg.num_classes));
    m.head.bias = Var::parameter(Tensor({cfg.num_classes}));
    return m;
  }

  // Attaches a fresh AlignedVQ module at `where`. Codebooks start zeroed; fit them before use.
  void attach_vq(const PartitionSpec& where, const VQConfig& vcfg, std::uint64_t seed) {
    cfg.check_partition(where);
    require(where.active(), ErrorKind::config, "cannot attach VQ at location NONE");
    require(vcfg.feature_dim == cfg.embed_dim, ErrorKind::config, "VQ feature_dim must equal embed_dim");
    partition = where;
    vq = AlignedVQModule::create(vcfg, seed);
  }

  void attach_adapter(std::size_t rank, float alpha, std::uint64_t seed) {
    adapter = LowRankAdapter::init(cfg.embed_dim, rank, cfg.num_classes, alpha, seed);
  }

  bool quantized() const { return vq.has_value() && partition.active(); }

  // Copies share parameter nodes; clone() gives an independent model.
  Model clone() const {
    Model c = *this;
    c.visit([](const std::string&, Var& v, ParamGroup) {
      const bool rg = v.requires_grad();
      v = Var::parameter(v.value());
      v.set_requires_grad(rg);
    });
    return c;
  }

  void visit(const ParamVisitor& fn) {
    fn("embed.weight", embed.weight, ParamGroup::backbone);
    fn("embed.bias", embed.bias, ParamGroup::backbone);
    fn("embed.cls", embed.cls, ParamGroup::backbone);
    fn("embed.pos", embed.pos, ParamGroup::backbone);
    fn("embed.ln_gain", embed.ln_gain, ParamGroup::backbone);
    fn("embed.ln_bias", embed.ln_bias, ParamGroup::backbone);
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].visit("block" + std::to_string(i) + ".", fn);
    fn("head.weight", head.weight, ParamGroup::backbone);
    fn("head.bias", head.bias, ParamGroup::backbone);
    if (adapter) {
      fn("adapter.a", adapter->a, ParamGroup::adapter);
      fn("adapter.b", adapter->b, ParamGroup::adapter);
    }
    if (vq) vq->dlp.visit([&](const std::string& name, Var& v) { fn(name, v, ParamGroup::dlp); });
  }
};

struct ForwardResult {
  Var logits;
  std::optional<AlignedVQOutput> vq;
};

inline Var run_blocks(const Model& m, Var x, std::size_t first, std::size_t last) {
  for (std::size_t i = first; i < last; ++i) x = block_plain(x, m.blocks[i]);
  return x;
}

inline Var finish_from(const Model& m, const Var& tapped) {
  const auto& part = m.partition;
  Var x = block_resume(tapped, m.blocks[part.block_index], part.location);
  x = run_blocks(m, x, part.block_index + 1, m.blocks.size());
  return head_forward(select_token(x, 0), m.head, m.adapter ? &*m.adapter : nullptr);
}

// Monolithic forward. When the model carries an active partition and VQ module,
// the quantized path is taken.
inline ForwardResult encoder_forward(const Model& m, const Tensor& images) {
  Var x = embed_tokens(images, m.embed, m.cfg);
  ForwardResult r;
  if (!m.quantized()) {
    x = run_blocks(m, x, 0, m.blocks.size());
    r.logits = head_forward(select_token(x, 0), m.head, m.adapter ? &*m.adapter : nullptr);
    return r;
  }
  m.cfg.check_partition(m.partition);
  x = run_blocks(m, x, 0, m.partition.block_index);
  auto q = alignedvq_forward(block_until(x, m.blocks[m.partition.block_index], m.partition.location), *m.vq);
  r.logits = finish_from(m, q.output);
  r.vq = std::move(q);
  return r;
}

// Edge half of a split run: the tensor at the partition, before quantization.
inline Tensor edge_features(const Model& m, const Tensor& images) {
  require(m.partition.active(), ErrorKind::config, "split execution needs a partition location");
  m.cfg.check_partition(m.partition);
  NoGradGuard ng;
  Var x = run_blocks(m, embed_tokens(images, m.embed, m.cfg), 0, m.partition.block_index);
  return block_until(x, m.blocks[m.partition.block_index], m.partition.location).value();
}

// Cloud half: resumes from the recovered partition tensor through the head.
inline Tensor cloud_resume(const Model& m, const Tensor& recovered) {
  require(m.partition.active(), ErrorKind::config, "split execution needs a partition location");
  m.cfg.check_partition(m.partition);
  NoGradGuard ng;
  return finish_from(m, Var::constant(recovered)).value();
}

// Coefficient of variation of per-token L2 magnitudes (population std / mean).
inline double cv_stats(const Tensor& x) {
  const std::size_t tokens = x.rows();
  require(tokens >= 2, ErrorKind::config, "cv_stats needs at least two tokens");
  std::vector<double> mags(tokens);
  double mean = 0.0;
  for (std::size_t r = 0; r < tokens; ++r) {
    mags[r] = std::sqrt(kernels::squared_norm(x.row(r)));
    mean += mags[r];
  }
  mean /= static_cast<double>(tokens);
  require(mean > 0.0, ErrorKind::numeric, "cv_stats undefined for all-zero features");
  double var = 0.0;
  for (double v : mags) var += (v - mean) * (v - mean);
  var /= static_cast<double>(tokens);
  return std::sqrt(var) / mean;
}

// CV at each tap location of block `block_index` for a batch of images.
inline std::map<TapLocation, double> block_cv_stats(const Model& m, const Tensor& images, std::size_t block_index) {
  m.cfg.check_partition({block_index, TapLocation::none});
  NoGradGuard ng;
  Var x = run_blocks(m, embed_tokens(images, m.embed, m.cfg), 0, block_index);
  BlockTaps taps;
  block_plain(x, m.blocks[block_index], &taps);
  std::map<TapLocation, double> out;
  for (auto& [loc, t] : taps.at) out[loc] = cv_stats(t);
  return out;
}

}  // namespace avq
