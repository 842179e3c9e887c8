#pragma once

// Gated linear adaptors around a straight-through quantizer:
//   Z_q   = VQ(Z_in + tanh(γ_in)·(Z_in W_in + b_in))
//   Z_out = Z_q + tanh(γ_out)·(Z_q W_out + b_out)
// γ_in = γ_out = 0 at init, so a fresh module is plain VQ.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "avq/autodiff.hpp"
#include "avq/init.hpp"
#include "avq/vq.hpp"

namespace avq {

struct DLPParams {
  Var w_in, b_in, gamma_in;
  Var w_out, b_out, gamma_out;

  static DLPParams init(std::size_t channels, std::uint64_t seed) {
    Rng rng(seed);
    DLPParams p;
    p.w_in = Var::parameter(xavier_uniform(rng, channels, channels));
    p.b_in = Var::parameter(Tensor({channels}));
    p.gamma_in = Var::parameter(Tensor::scalar(0.0f));
    p.w_out = Var::parameter(xavier_uniform(rng, channels, channels));
    p.b_out = Var::parameter(Tensor({channels}));
    p.gamma_out = Var::parameter(Tensor::scalar(0.0f));
    return p;
  }

  std::size_t channels() const { return b_in.value().size(); }

  void visit(const std::function<void(const std::string&, Var&)>& fn) {
    fn("dlp.w_in", w_in);
    fn("dlp.b_in", b_in);
    fn("dlp.gamma_in", gamma_in);
    fn("dlp.w_out", w_out);
    fn("dlp.b_out", b_out);
    fn("dlp.gamma_out", gamma_out);
  }
};

namespace detail {
inline Var gated_linear(const Var& z, const Var& w, const Var& b, const Var& gamma) {
  require_dims(z.value().cols() == w.shape()[0], "DLP projection width does not match features");
  return add(z, scale_by(add_bias(matmul(z, w), b), tanh_scalar(gamma)));
}
}  // namespace detail

inline Var dlp_in(const Var& z, const DLPParams& p) { return detail::gated_linear(z, p.w_in, p.b_in, p.gamma_in); }
inline Var dlp_out(const Var& zq, const DLPParams& p) {
  return detail::gated_linear(zq, p.w_out, p.b_out, p.gamma_out);
}

struct AlignedVQModule {
  DLPParams dlp;
  VQConfig config;
  std::vector<Codebook> codebooks;

  static AlignedVQModule create(const VQConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    AlignedVQModule m{DLPParams::init(cfg.feature_dim, seed), cfg,
                      std::vector<Codebook>(cfg.total_codebooks(), Codebook(cfg.entries, cfg.group_dim()))};
    return m;
  }

  std::vector<std::uint64_t> hashes() const {
    std::vector<std::uint64_t> h;
    for (const auto& cb : codebooks) h.push_back(cb.content_hash());
    return h;
  }
};

struct AlignedVQOutput {
  Var output;       // recovered features fed downstream
  IndexGrid indices;  // what crosses the link
  Var commit;       // ||Z_in' - sg(Q(Z_in'))||², mean over tokens (β not applied)
  Tensor pre_quant;  // dlp_in output, for EMA statistics
};

inline AlignedVQOutput alignedvq_forward(const Var& z, const AlignedVQModule& m) {
  require_dims(z.value().cols() == m.config.feature_dim && m.dlp.channels() == m.config.feature_dim,
               "AlignedVQ module width does not match features");
  Var pre = dlp_in(z, m.dlp);
  auto q = ste_quantize(pre, m.config, m.codebooks);
  Var commit = commitment_loss(pre, q.dequantized, 1.0f);
  Var out = dlp_out(q.output, m.dlp);
  return {std::move(out), std::move(q.indices), std::move(commit), pre.value()};
}

// Edge half: features -> indices.
inline IndexGrid alignedvq_encode(const Tensor& z, const AlignedVQModule& m) {
  NoGradGuard ng;
  Var pre = dlp_in(Var::constant(z), m.dlp);
  return quantize(pre.value(), m.config, m.codebooks).indices;
}

// Cloud half: indices -> recovered features. Same arithmetic as alignedvq_forward.
inline Tensor alignedvq_decode(const IndexGrid& grid, const AlignedVQModule& m) {
  NoGradGuard ng;
  return dlp_out(Var::constant(dequantize(grid, m.config, m.codebooks)), m.dlp).value();
}

}  // namespace avq
