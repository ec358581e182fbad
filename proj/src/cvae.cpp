// SPDX-License-Identifier: Apache-2.0

#include "divkd/cvae.hpp"

#include <algorithm>

namespace divkd {

namespace {

constexpr double kLogVarLo = -10.0;
constexpr double kLogVarHi = 10.0;

void require_cvae(const Model& model) {
  if (!model.has_cvae()) {
    throw ConfigError("model has no latent pathway");
  }
}

}  // namespace

GaussianParams posterior(Tape& t, Model& model, const EncoderOutput& enc,
                         const Equation& target) {
  require_cvae(model);
  if (!validate_prefix(target.tokens)) {
    throw FormatError("posterior target is not a valid prefix equation");
  }
  ParamStore& ps = model.params();
  const int d = model.config().hidden_dim;

  std::vector<int> indices = enc.out_vocab.indices_of(target);
  const int m = static_cast<int>(indices.size());
  std::vector<Val> rows;
  rows.reserve(indices.size());
  for (int idx : indices) rows.push_back(t.slice_rows(enc.cand_repr, idx, 1));
  Val Y = t.concat_rows(rows);  // m x e
  std::reverse(rows.begin(), rows.end());
  Val Y_rev = t.concat_rows(rows);

  Val gx_fw = t.add(t.matmul(Y, t.param(ps.get("cvae.posterior.gru.fw.W"))),
                    t.param(ps.get("cvae.posterior.gru.fw.b")));
  Val gx_bw = t.add(t.matmul(Y_rev, t.param(ps.get("cvae.posterior.gru.bw.W"))),
                    t.param(ps.get("cvae.posterior.gru.bw.b")));
  std::vector<Val> fw =
      gru_scan(t, gx_fw, t.param(ps.get("cvae.posterior.gru.fw.U")), m, d);
  std::vector<Val> bw =
      gru_scan(t, gx_bw, t.param(ps.get("cvae.posterior.gru.bw.U")), m, d);

  // Final state of each direction: fw.back() saw the whole equation
  // left-to-right, bw.back() right-to-left.
  Val h_y = t.concat_cols({fw.back(), bw.back()});
  Val h = t.concat_cols({enc.root, h_y});  // 1 x 4d

  Val mu = t.add(t.matmul(h, t.param(ps.get("cvae.posterior.mu.W"))),
                 t.param(ps.get("cvae.posterior.mu.b")));
  Val lv = t.clamp(t.add(t.matmul(h, t.param(ps.get("cvae.posterior.sig.W"))),
                         t.param(ps.get("cvae.posterior.sig.b"))),
                   kLogVarLo, kLogVarHi);
  return GaussianParams{mu, lv};
}

GaussianParams prior(Tape& t, Model& model, const EncoderOutput& enc) {
  require_cvae(model);
  ParamStore& ps = model.params();
  Val mu = t.add(t.matmul(enc.root, t.param(ps.get("cvae.prior.mu.W"))),
                 t.param(ps.get("cvae.prior.mu.b")));
  Val lv = t.clamp(t.add(t.matmul(enc.root, t.param(ps.get("cvae.prior.sig.W"))),
                         t.param(ps.get("cvae.prior.sig.b"))),
                   kLogVarLo, kLogVarHi);
  return GaussianParams{mu, lv};
}

LatentSample sample_latent(Tape& t, Model& model, const GaussianParams& g,
                           const Matrix& eps) {
  require_cvae(model);
  const Matrix& mu = t.value(g.mu);
  if (eps.rows() != mu.rows() || eps.cols() != mu.cols()) {
    throw ShapeError("latent noise shape " + std::to_string(eps.rows()) + "x" +
                     std::to_string(eps.cols()) + " does not match latent " +
                     std::to_string(mu.rows()) + "x" +
                     std::to_string(mu.cols()));
  }
  Val std_dev = t.exp(t.scale(g.log_var, 0.5));
  Val z = t.add(g.mu, t.elem_mul(std_dev, t.input(eps)));
  Val h_z = t.matmul(z, t.param(model.params().get("cvae.proj.W")));
  return LatentSample{z, h_z, eps};
}

LatentSample sample_latent(Tape& t, Model& model, const GaussianParams& g,
                           Rng& rng) {
  Matrix eps(1, model.config().latent_dim);
  for (Eigen::Index i = 0; i < eps.cols(); ++i) eps(0, i) = rng.normal();
  return sample_latent(t, model, g, eps);
}

Val kl_divergence(Tape& t, const GaussianParams& q, const GaussianParams& p) {
  Val d_mu = t.sub(q.mu, p.mu);
  Val numer = t.add(t.exp(q.log_var), t.elem_mul(d_mu, d_mu));
  Val term = t.add(t.scale(t.sub(p.log_var, q.log_var), 0.5),
                   t.scale(t.elem_mul(numer, t.exp(t.neg(p.log_var))), 0.5));
  return t.sum(t.add_scalar(term, -0.5));
}

CvaeLossParts cvae_loss(Tape& t, Model& model, const EncoderOutput& enc,
                        const Equation& target, double kl_weight,
                        const Matrix& eps) {
  GaussianParams q = posterior(t, model, enc, target);
  GaussianParams p = prior(t, model, enc);
  LatentSample latent = sample_latent(t, model, q, eps);
  DecodeResult decode = model.decode_teacher_forced(t, enc, target, latent.h_z);
  Val kl = kl_divergence(t, q, p);
  Val total = t.add(decode.nll, t.scale(kl, kl_weight));
  return CvaeLossParts{total, decode.nll, kl, std::move(latent),
                       std::move(decode)};
}

CvaeLossParts cvae_loss(Tape& t, Model& model, const EncoderOutput& enc,
                        const Equation& target, double kl_weight, Rng& rng) {
  Matrix eps(1, model.config().latent_dim);
  for (Eigen::Index i = 0; i < eps.cols(); ++i) eps(0, i) = rng.normal();
  return cvae_loss(t, model, enc, target, kl_weight, eps);
}

}  // namespace divkd
