#pragma once

// PIXC checkpoint: magic "PIXC", u32 version, u32-length-prefixed config
// text block (the key=value dialect), then per-tensor records of
// u32 name length + name bytes, u32 rank, u64 extents and little-endian
// 32-bit reals, read until end of file. Optimizer moments, when saved,
// ride along as adam_m./adam_v. records.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pixnet/configfile.hpp"
#include "pixnet/io/binary.hpp"
#include "pixnet/model.hpp"
#include "pixnet/train.hpp"

namespace pixnet {

constexpr std::uint32_t kCheckpointVersion = 1;

inline KeyValues model_config_to_kv(const ModelConfig& cfg) {
  KeyValues kv;
  kv.set_int("patch_size", cfg.encoder.patch_size);
  kv.set_int("embed_dim", cfg.encoder.embed_dim);
  kv.set_int("levels", cfg.encoder.levels);
  kv.set_int("groups", cfg.encoder.groups);
  kv.set_int("blocks_per_group", cfg.encoder.blocks_per_group);
  kv.set_int("heads", cfg.encoder.heads);
  kv.set_int("mlp_ratio", cfg.encoder.mlp_ratio);
  kv.set_int("input_h", cfg.encoder.input_h);
  kv.set_int("input_w", cfg.encoder.input_w);
  kv.set_int_list("filter_sizes", cfg.decoder.filter_sizes);
  kv.set_int("d_exponent", cfg.decoder.d_exponent);
  kv.set_int("shallow_threshold", cfg.decoder.shallow_threshold);
  kv.set("attention_mode", cfg.decoder.attention_mode == AttentionMode::channel ? "channel" : "spatial");
  kv.set_int("genes", cfg.decoder.genes);
  kv.set_int("bn_batch_stats", 1);  // batch norm uses current-batch statistics, always
  return kv;
}

inline ModelConfig model_config_from_kv(const KeyValues& kv) {
  ModelConfig cfg;
  cfg.encoder.patch_size = static_cast<int>(kv.get_int("patch_size", cfg.encoder.patch_size));
  cfg.encoder.embed_dim = static_cast<int>(kv.get_int("embed_dim", cfg.encoder.embed_dim));
  cfg.encoder.levels = static_cast<int>(kv.get_int("levels", cfg.encoder.levels));
  cfg.encoder.groups = static_cast<int>(kv.get_int("groups", cfg.encoder.groups));
  cfg.encoder.blocks_per_group =
      static_cast<int>(kv.get_int("blocks_per_group", cfg.encoder.blocks_per_group));
  cfg.encoder.heads = static_cast<int>(kv.get_int("heads", cfg.encoder.heads));
  cfg.encoder.mlp_ratio = static_cast<int>(kv.get_int("mlp_ratio", cfg.encoder.mlp_ratio));
  cfg.encoder.input_h = static_cast<int>(kv.get_int("input_h", cfg.encoder.input_h));
  cfg.encoder.input_w = static_cast<int>(kv.get_int("input_w", cfg.encoder.input_w));
  cfg.decoder.filter_sizes = kv.get_int_list("filter_sizes", cfg.decoder.filter_sizes);
  cfg.decoder.d_exponent = static_cast<int>(kv.get_int("d_exponent", cfg.decoder.d_exponent));
  cfg.decoder.shallow_threshold =
      static_cast<int>(kv.get_int("shallow_threshold", cfg.decoder.shallow_threshold));
  const std::string mode = kv.get("attention_mode", "channel");
  if (mode == "channel")
    cfg.decoder.attention_mode = AttentionMode::channel;
  else if (mode == "spatial")
    cfg.decoder.attention_mode = AttentionMode::spatial;
  else
    throw DataError("checkpoint: unknown attention_mode '" + mode + "'");
  cfg.decoder.genes = static_cast<int>(kv.get_int("genes", cfg.decoder.genes));
  cfg.encoder.tap_channels = cfg.decoder.filter_sizes;
  return cfg;
}

namespace detail {

template <typename S>
void write_tensor_record(io::Writer& wr, const std::string& name, const Shape& shape,
                         const std::vector<S>& value) {
  wr.u32le(static_cast<std::uint32_t>(name.size()));
  wr.bytes(name.data(), name.size());
  wr.u32le(static_cast<std::uint32_t>(shape.size()));
  for (int e : shape) wr.u64le(static_cast<std::uint64_t>(e));
  for (S v : value) wr.f32le(static_cast<float>(v));
}

}  // namespace detail

template <typename S>
void save_checkpoint(const std::string& path, const PixNetModel<S>& model,
                     const KeyValues& extra = {}, const AdamWState<S>* optimizer = nullptr) {
  KeyValues kv = model_config_to_kv(model.config());
  for (const auto& [k, v] : extra.items()) kv.set(k, v);
  kv.set_int("has_optimizer", optimizer ? 1 : 0);
  if (optimizer) kv.set_int("adam_step", optimizer->step);
  const std::string cfg_text = kv.serialize();

  io::Writer wr;
  wr.bytes("PIXC", 4);
  wr.u32le(kCheckpointVersion);
  wr.u32le(static_cast<std::uint32_t>(cfg_text.size()));
  wr.bytes(cfg_text.data(), cfg_text.size());

  ParamMap<S> params = model.params();
  for (const auto& [name, t] : params.items)
    detail::write_tensor_record(wr, name, t.shape(), t.value());
  if (optimizer) {
    if (optimizer->m.size() != params.count())
      throw DimensionError("save_checkpoint: optimizer state does not match parameters");
    for (std::size_t i = 0; i < params.count(); ++i) {
      detail::write_tensor_record(wr, "adam_m." + params.items[i].first,
                                  params.items[i].second.shape(), optimizer->m[i]);
      detail::write_tensor_record(wr, "adam_v." + params.items[i].first,
                                  params.items[i].second.shape(), optimizer->v[i]);
    }
  }
  io::write_file(path, wr.buf);
}

template <typename S>
struct CheckpointBundle {
  KeyValues kv;
  std::shared_ptr<PixNetModel<S>> model;
  std::optional<AdamWState<S>> optimizer;
};

inline long kv_step(const KeyValues& kv) { return kv.get_int("adam_step", 0); }

template <typename S>
CheckpointBundle<S> load_checkpoint(const std::string& path) {
  const auto buf = io::read_file(path);
  io::Reader rd(buf, path);
  const std::uint8_t* magic = rd.take(4);
  if (std::string(reinterpret_cast<const char*>(magic), 4) != "PIXC")
    throw DataError(path + ": not a PIXC checkpoint (bad magic)");
  const std::uint32_t version = rd.u32le();
  if (version != kCheckpointVersion)
    throw DataError(path + ": unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t cfg_len = rd.u32le();
  const std::uint8_t* cfg_bytes = rd.take(cfg_len);
  CheckpointBundle<S> bundle;
  bundle.kv = KeyValues::parse(std::string(reinterpret_cast<const char*>(cfg_bytes), cfg_len), path);

  const ModelConfig cfg = model_config_from_kv(bundle.kv);
  bundle.model = std::make_shared<PixNetModel<S>>(cfg, 0);
  ParamMap<S> params = bundle.model->params();

  const bool has_opt = bundle.kv.get_int("has_optimizer", 0) != 0;
  if (has_opt) {
    bundle.optimizer.emplace();
    bundle.optimizer->step = kv_step(bundle.kv);
    bundle.optimizer->m.resize(params.count());
    bundle.optimizer->v.resize(params.count());
  }

  std::vector<bool> filled(params.count(), false);
  while (!rd.at_end()) {
    const std::uint32_t name_len = rd.u32le();
    const std::uint8_t* name_bytes = rd.take(name_len);
    const std::string name(reinterpret_cast<const char*>(name_bytes), name_len);
    const std::uint32_t rank = rd.u32le();
    if (rank == 0 || rank > 8) throw DataError(path + ": implausible tensor rank for " + name);
    Shape shape(rank);
    std::size_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const std::uint64_t e = rd.u64le();
      if (e == 0 || e > (1u << 28)) throw DataError(path + ": implausible extent for " + name);
      shape[i] = static_cast<int>(e);
      count *= static_cast<std::size_t>(e);
    }
    std::vector<S> value(count);
    for (std::size_t i = 0; i < count; ++i) value[i] = static_cast<S>(rd.f32le());

    std::string base = name;
    int slot = 0;  // 0 param, 1 adam_m, 2 adam_v
    if (name.rfind("adam_m.", 0) == 0) {
      base = name.substr(7);
      slot = 1;
    } else if (name.rfind("adam_v.", 0) == 0) {
      base = name.substr(7);
      slot = 2;
    }
    bool matched = false;
    for (std::size_t i = 0; i < params.count(); ++i) {
      if (params.items[i].first != base) continue;
      if (params.items[i].second.shape() != shape)
        throw DataError(path + ": tensor " + name + " has shape " + shape_str(shape) +
                        ", model expects " + shape_str(params.items[i].second.shape()));
      if (slot == 0) {
        params.items[i].second.value() = std::move(value);
        filled[i] = true;
      } else if (bundle.optimizer) {
        (slot == 1 ? bundle.optimizer->m : bundle.optimizer->v)[i] = std::move(value);
      }
      matched = true;
      break;
    }
    if (!matched && slot == 0) throw DataError(path + ": unknown tensor '" + name + "'");
  }
  for (std::size_t i = 0; i < params.count(); ++i)
    if (!filled[i]) throw DataError(path + ": missing tensor '" + params.items[i].first + "'");
  if (bundle.optimizer) {
    for (std::size_t i = 0; i < params.count(); ++i) {
      if (bundle.optimizer->m[i].size() != params.items[i].second.size() ||
          bundle.optimizer->v[i].size() != params.items[i].second.size())
        throw DataError(path + ": incomplete optimizer moments");
    }
  }
  return bundle;
}

}  // namespace pixnet
