#pragma once

// Shared helpers for end-to-end gradient checks against finite differences,
// used by unit tests and the acceptance suite.

#include <cmath>
#include <cstddef>
#include <vector>

#include "funcspace/autoencoder.hpp"
#include "funcspace/train.hpp"

namespace e2e {

struct ParamGradSample {
  double ad = 0.0;
  double fd = 0.0;
  double rel_error() const {
    const double denom = std::max({std::fabs(ad), std::fabs(fd), 1e-4});
    return std::fabs(ad - fd) / denom;
  }
};

// Reverse-mode vs central-difference derivative of the training loss of one
// corpus item with respect to parameter tensor `entry`, component `comp`.
inline ParamGradSample param_grad_check(funcspace::ae::AutoencoderParams& params,
                                        const funcspace::gen::Corpus& corpus,
                                        std::size_t item,
                                        const funcspace::ae::LossSpec& loss,
                                        std::size_t entry, std::size_t comp,
                                        double step = 1e-5) {
  auto entries = params.tensor_entries();
  const std::size_t indices[] = {item};

  ParamGradSample sample;
  {
    std::vector<funcspace::diff::Tensor> sinks;
    for (const auto& [name, tensor] : entries) {
      sinks.push_back(funcspace::diff::Tensor::zeros(tensor->shape()));
    }
    funcspace::diff::Tape tape;
    funcspace::ae::Binder binder(tape, params, &sinks);
    const auto& it = corpus.items[item];
    funcspace::diff::Tensor enc_in =
        funcspace::ae::encoder_input(params.arch, it.spec);
    funcspace::diff::Var x = tape.constant_ref(&corpus.grid);
    funcspace::diff::Var y = tape.constant_ref(&it.outputs);
    funcspace::diff::Var z =
        funcspace::ae::build_encoder(binder, tape.constant_ref(&enc_in),
                                     it.spec.depth());
    std::vector<funcspace::diff::Var> errors;
    for (const auto& d : funcspace::ae::build_decoder(binder, z)) {
      auto pred = funcspace::ae::build_soft_predict(binder, d, x);
      auto e = tape.sub(pred, y);
      errors.push_back(tape.sum(tape.mul(e, e)));
    }
    funcspace::diff::Var out;
    if (loss.kind == funcspace::ae::LossSpec::Kind::kMin) {
      out = tape.min_of(errors);
    } else {
      for (auto a : errors) {
        auto term =
            tape.pow(loss.p < 1.0 ? tape.shift(a, 1e-12) : a, loss.p);
        out = out.valid() ? tape.add(out, term) : term;
      }
      out = tape.pow(out, 1.0 / loss.p);
    }
    tape.backward(out);
    sample.ad = sinks[entry][comp];
  }

  double& cell = (*entries[entry].second)[comp];
  const double saved = cell;
  cell = saved + step;
  const double hi = funcspace::ae::batch_loss(params, corpus, indices, loss);
  cell = saved - step;
  const double lo = funcspace::ae::batch_loss(params, corpus, indices, loss);
  cell = saved;
  sample.fd = (hi - lo) / (2.0 * step);
  return sample;
}

}  // namespace e2e
