// SPDX-License-Identifier: Apache-2.0
//
// Conditional latent-variable head for the student: a recognition network
// q(z | problem, equation), a prior network p(z | problem), reparameterized
// sampling, and the variational loss (reconstruction + annealed KL). The
// latent sample is projected to hidden width and added to the decoder's root
// goal, steering whole-equation decoding.
#ifndef DIVKD_CVAE_HPP
#define DIVKD_CVAE_HPP

#include "divkd/autodiff.hpp"
#include "divkd/expr.hpp"
#include "divkd/model.hpp"

namespace divkd {

// Diagonal Gaussian in latent space; both fields are 1 x latent_dim.
// log_var is clamped to [-10, 10] to keep exp() tame.
struct GaussianParams {
  Val mu;
  Val log_var;
};

struct LatentSample {
  Val z;       // 1 x latent_dim
  Val h_z;     // 1 x 2*hidden_dim, projection added to the root goal
  Matrix eps;  // the standard-normal draw used (kept for exact replay)
};

// Recognition network: a BiGRU over the target equation's candidate
// representations, concatenated with the problem root, feeding the Gaussian
// heads. Requires a model built with a latent pathway (ConfigError
// otherwise) and a prefix-valid target (FormatError).
GaussianParams posterior(Tape& t, Model& model, const EncoderOutput& enc,
                         const Equation& target);

// Prior network: Gaussian heads on the problem root alone.
GaussianParams prior(Tape& t, Model& model, const EncoderOutput& enc);

// z = mu + exp(log_var / 2) * eps. The eps overload replays a given draw
// (ShapeError unless 1 x latent_dim); the rng overload draws one.
LatentSample sample_latent(Tape& t, Model& model, const GaussianParams& g,
                           const Matrix& eps);
LatentSample sample_latent(Tape& t, Model& model, const GaussianParams& g,
                           Rng& rng);

// KL(q || p) for diagonal Gaussians, summed over dimensions:
//   sum( (lv_p - lv_q)/2 + (exp(lv_q) + (mu_q - mu_p)^2) / (2 exp(lv_p)) - 1/2 )
Val kl_divergence(Tape& t, const GaussianParams& q, const GaussianParams& p);

struct CvaeLossParts {
  Val total;  // nll + kl_weight * kl
  Val nll;    // teacher-forced reconstruction under the sampled latent
  Val kl;     // KL(posterior || prior)
  LatentSample latent;
  DecodeResult decode;
};

// Full variational objective for one (problem, equation) pair. kl_weight is
// the annealing factor in [0, 1].
CvaeLossParts cvae_loss(Tape& t, Model& model, const EncoderOutput& enc,
                        const Equation& target, double kl_weight,
                        const Matrix& eps);
CvaeLossParts cvae_loss(Tape& t, Model& model, const EncoderOutput& enc,
                        const Equation& target, double kl_weight, Rng& rng);

}  // namespace divkd

#endif
