#pragma once

#include <cstdint>
#include <vector>

#include "pixnet/decoder.hpp"
#include "pixnet/encoder.hpp"
#include "pixnet/params.hpp"

namespace pixnet {

struct ModelConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;

  // desk-scale defaults: patch 4, embed 64, L=4, filters [16,32,64,64]
  static ModelConfig toy(int input_h = 64, int input_w = 64, int genes = 8) {
    ModelConfig cfg;
    cfg.encoder.input_h = input_h;
    cfg.encoder.input_w = input_w;
    cfg.decoder = DecoderConfig::make({16, 32, 64, 64}, genes);
    cfg.encoder.tap_channels = cfg.decoder.filter_sizes;
    return cfg;
  }

  // paper-sized decoder widths, still trained from scratch
  static ModelConfig full(int input_h, int input_w, int genes) {
    ModelConfig cfg;
    cfg.encoder.patch_size = 4;
    cfg.encoder.embed_dim = 128;
    cfg.encoder.levels = 6;
    cfg.encoder.input_h = input_h;
    cfg.encoder.input_w = input_w;
    cfg.decoder = DecoderConfig::make({64, 128, 256, 512, 512, 512}, genes);
    cfg.decoder.shallow_threshold = 3;
    cfg.encoder.tap_channels = cfg.decoder.filter_sizes;
    return cfg;
  }

  void validate() const {
    encoder.validate();
    decoder.validate();
    if (encoder.levels != decoder.levels())
      throw DimensionError("model: encoder levels != decoder levels");
    if (encoder.tap_channels != decoder.filter_sizes)
      throw DimensionError("model: encoder tap widths must equal decoder filter sizes");
  }
};

template <typename S>
class PixNetModel {
 public:
  PixNetModel(const ModelConfig& cfg, std::uint64_t seed)
      : cfg_(cfg), rng_(seed), encoder_(make_encoder()), decoder_(cfg_.decoder, rng_) {}

  const ModelConfig& config() const { return cfg_; }

  // [3,H,W] image in [0,1] -> [genes,H,W] expression map
  Tensor<S> forward(const Tensor<S>& image, DecodeTrace* trace = nullptr) const {
    std::vector<Tensor<S>> pyramid = encoder_.extract_pyramid(image);
    return decoder_.decode(pyramid, image.extent(1), image.extent(2), trace);
  }

  ParamMap<S> params() const {
    ParamMap<S> out;
    encoder_.collect("encoder.", out);
    decoder_.collect("decoder.", out);
    return out;
  }

  void zero_grad() const { params().zero_grad(); }

  Encoder<S>& encoder() { return encoder_; }
  Decoder<S>& decoder() { return decoder_; }
  const Encoder<S>& encoder() const { return encoder_; }
  const Decoder<S>& decoder() const { return decoder_; }

 private:
  Encoder<S> make_encoder() {
    cfg_.validate();
    return Encoder<S>(cfg_.encoder, rng_);
  }

  ModelConfig cfg_;
  Rng rng_;  // construction-time only; kept so member init order is explicit
  Encoder<S> encoder_;
  Decoder<S> decoder_;
};

}  // namespace pixnet
