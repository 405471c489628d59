#pragma once

// Plain single-autoencoder training loop written against the nets API only.
// Seeds follow the documented scheme: encoder base·10000, decoder
// base·10000 + 5000, batch stream base·10000 + 9002.

#include <vector>

#include "cbae/data.hpp"
#include "cbae/nets.hpp"
#include "cbae/rng.hpp"

namespace cbae::testing {

struct ReferenceStep {
  double loss = 0.0;
  std::uint64_t encoder_checksum = 0;
  std::uint64_t decoder_checksum = 0;
};

inline std::vector<ReferenceStep> reference_autoencoder(const Dataset& data, const Architecture& arch,
                                                        std::uint64_t base_seed, std::size_t steps,
                                                        std::size_t batch_size, double lr) {
  EncoderParams enc = init_encoder(arch, base_seed * 10000);
  DecoderParams dec = init_decoder(arch, base_seed * 10000 + 5000);
  auto enc_params = enc.mlp.tensors();
  auto dec_params = dec.mlp.tensors();
  AdamConfig cfg;
  cfg.lr = lr;
  AdamState enc_adam(enc_params, cfg), dec_adam(dec_params, cfg);
  Rng batches(base_seed * 10000 + 9002);

  std::vector<ReferenceStep> out;
  std::vector<std::size_t> rows(batch_size);
  for (std::size_t step = 0; step < steps; ++step) {
    for (auto& r : rows) r = batches.index(data.size());
    const Tensor x = gather_rows(data.images, rows);
    Tape tape;
    const Tensor loss = mse_loss(tape, x, decode(tape, encode(tape, x, enc), dec));
    tape.backward(loss);
    adam_step(enc_params, enc_adam);
    adam_step(dec_params, dec_adam);
    tape.clear();
    out.push_back({loss.item(), checksum(enc.mlp), checksum(dec.mlp)});
  }
  return out;
}

}  // namespace cbae::testing
