#pragma once

// Flat key=value run configuration. One key per line, '#' starts a comment.
// Keys mirror the model/data/vq/train/link structs; unknown keys are errors.

#include <charconv>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "avq/data.hpp"
#include "avq/encoder.hpp"
#include "avq/split.hpp"
#include "avq/train.hpp"

namespace avq {

struct RunConfig {
  ModelConfig model;
  DataConfig data;
  VQConfig vq;
  PartitionSpec partition{0, TapLocation::ln1};
  TrainConfig train;
  TrainConfig finetune = finetune_defaults();
  LinkModel link;

  // Applies one key. Throws config errors for unknown keys or unparsable values.
  void set(const std::string& key, const std::string& value);
  // Every key with its current value, in a fixed order.
  std::vector<std::pair<std::string, std::string>> resolved() const;

  // A single seed drives model init, data generation and both training stages.
  void set_seed(std::uint64_t s) {
    model.seed = data.seed = train.seed = finetune.seed = s;
  }

  void load_text(std::string_view text) {
    std::size_t line_no = 0;
    std::istringstream in{std::string(text)};
    for (std::string line; std::getline(in, line);) {
      ++line_no;
      if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string();
        return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      require(eq != std::string::npos, ErrorKind::config,
              "config line " + std::to_string(line_no) + ": expected key=value");
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
  }

  void load_file(const std::string& path) {
    Bytes b = read_file(path);
    load_text(std::string_view(reinterpret_cast<const char*>(b.data()), b.size()));
  }

  std::string dump() const {
    std::string out;
    for (const auto& [k, v] : resolved()) out += k + " = " + v + "\n";
    return out;
  }
};

namespace detail {

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  if constexpr (std::is_floating_point_v<T>) {
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      if (used == v.size() && std::isfinite(d)) return static_cast<T>(d);
    } catch (const std::exception&) {
    }
  } else {
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec == std::errc() && p == v.data() + v.size()) return out;
  }
  throw Error(ErrorKind::config, "config key '" + key + "': cannot parse '" + v + "'");
}

inline std::string format_number(double v) {
  std::ostringstream os;
  os << std::setprecision(9) << v;
  return os.str();
}

struct KeyHandler {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T, typename Access>
KeyHandler number_key(std::string key, Access access) {
  return {[key, access](RunConfig& c, const std::string& v) { access(c) = parse_number<T>(key, v); },
          [access](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>)
              return format_number(access(const_cast<RunConfig&>(c)));
            else
              return std::to_string(access(const_cast<RunConfig&>(c)));
          }};
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw Error(ErrorKind::config, key + ": expected true/false, got '" + v + "'");
}

inline std::string format_groups(const std::set<TrainGroup>& groups) {
  std::string out;
  for (auto g : groups) out += (out.empty() ? "" : ",") + std::string(to_string(g));
  return out.empty() ? "none" : out;
}

inline std::set<TrainGroup> parse_groups(const std::string& v) {
  std::set<TrainGroup> out;
  if (v == "none" || v.empty()) return out;
  std::istringstream in(v);
  for (std::string tok; std::getline(in, tok, ',');) out.insert(parse_train_group(tok));
  return out;
}

inline void add_train_keys(std::vector<std::pair<std::string, KeyHandler>>& t, const std::string& prefix,
                           TrainConfig RunConfig::*member) {
  auto tr = [member](RunConfig& c) -> TrainConfig& { return c.*member; };
  t.push_back({prefix + "beta", number_key<float>(prefix + "beta", [tr](RunConfig& c) -> float& { return tr(c).beta; })});
  t.push_back({prefix + "lr", number_key<float>(prefix + "lr", [tr](RunConfig& c) -> float& { return tr(c).lr; })});
  t.push_back({prefix + "epochs",
               number_key<std::size_t>(prefix + "epochs", [tr](RunConfig& c) -> std::size_t& { return tr(c).epochs; })});
  t.push_back({prefix + "batch_size", number_key<std::size_t>(prefix + "batch_size", [tr](RunConfig& c) -> std::size_t& {
                 return tr(c).batch_size;
               })});
  t.push_back({prefix + "ema_gamma",
               number_key<float>(prefix + "ema_gamma", [tr](RunConfig& c) -> float& { return tr(c).ema_gamma; })});
  t.push_back({prefix + "laplace_eps",
               number_key<float>(prefix + "laplace_eps", [tr](RunConfig& c) -> float& { return tr(c).laplace_eps; })});
  t.push_back({prefix + "dead_after", number_key<std::uint32_t>(prefix + "dead_after", [tr](RunConfig& c) -> std::uint32_t& {
                 return tr(c).dead_after;
               })});
  t.push_back({prefix + "adapter_rank", number_key<std::size_t>(prefix + "adapter_rank", [tr](RunConfig& c) -> std::size_t& {
                 return tr(c).adapter_rank;
               })});
  t.push_back({prefix + "adapter_alpha",
               number_key<float>(prefix + "adapter_alpha", [tr](RunConfig& c) -> float& { return tr(c).adapter_alpha; })});
  t.push_back({prefix + "kmeans_samples", number_key<std::size_t>(prefix + "kmeans_samples", [tr](RunConfig& c) -> std::size_t& {
                 return tr(c).kmeans_samples;
               })});
  t.push_back({prefix + "kmeans_iters", number_key<std::size_t>(prefix + "kmeans_iters", [tr](RunConfig& c) -> std::size_t& {
                 return tr(c).kmeans_iters;
               })});
  t.push_back({prefix + "frozen",
               {[tr](RunConfig& c, const std::string& v) { tr(c).frozen = parse_groups(v); },
                [tr](const RunConfig& c) { return format_groups(tr(const_cast<RunConfig&>(c)).frozen); }}});
}

inline const std::vector<std::pair<std::string, KeyHandler>>& key_table() {
  static const auto table = [] {
    std::vector<std::pair<std::string, KeyHandler>> t;
    auto sz = [&t](const std::string& k, auto access) { t.push_back({k, number_key<std::size_t>(k, access)}); };
    auto dbl = [&t](const std::string& k, auto access) { t.push_back({k, number_key<double>(k, access)}); };
    sz("model.image_size", [](RunConfig& c) -> std::size_t& { return c.model.image_size; });
    sz("model.patch_size", [](RunConfig& c) -> std::size_t& { return c.model.patch_size; });
    sz("model.image_channels", [](RunConfig& c) -> std::size_t& { return c.model.image_channels; });
    sz("model.embed_dim", [](RunConfig& c) -> std::size_t& { return c.model.embed_dim; });
    sz("model.depth", [](RunConfig& c) -> std::size_t& { return c.model.depth; });
    sz("model.heads", [](RunConfig& c) -> std::size_t& { return c.model.heads; });
    sz("model.num_classes", [](RunConfig& c) -> std::size_t& { return c.model.num_classes; });
    t.push_back({"model.variant",
                 {[](RunConfig& c, const std::string& v) { c.model.variant = parse_block_variant(v); },
                  [](const RunConfig& c) { return std::string(to_string(c.model.variant)); }}});
    t.push_back({"model.embed_norm",
                 {[](RunConfig& c, const std::string& v) { c.model.embed_norm = parse_bool("model.embed_norm", v); },
                  [](const RunConfig& c) { return std::string(c.model.embed_norm ? "true" : "false"); }}});
    t.push_back({"model.seed", number_key<std::uint64_t>("model.seed",
                                                         [](RunConfig& c) -> std::uint64_t& { return c.model.seed; })});
    sz("data.samples_per_class", [](RunConfig& c) -> std::size_t& { return c.data.samples_per_class; });
    dbl("data.noise_sigma", [](RunConfig& c) -> double& { return c.data.noise_sigma; });
    dbl("data.contrast_jitter", [](RunConfig& c) -> double& { return c.data.contrast_jitter; });
    t.push_back({"data.seed", number_key<std::uint64_t>("data.seed",
                                                        [](RunConfig& c) -> std::uint64_t& { return c.data.seed; })});
    sz("vq.codebooks", [](RunConfig& c) -> std::size_t& { return c.vq.num_codebooks; });
    sz("vq.groups", [](RunConfig& c) -> std::size_t& { return c.vq.num_groups; });
    sz("vq.entries", [](RunConfig& c) -> std::size_t& { return c.vq.entries; });
    sz("partition.block", [](RunConfig& c) -> std::size_t& { return c.partition.block_index; });
    t.push_back({"partition.location",
                 {[](RunConfig& c, const std::string& v) { c.partition.location = parse_tap_location(v); },
                  [](const RunConfig& c) { return std::string(to_string(c.partition.location)); }}});
    add_train_keys(t, "train.", &RunConfig::train);
    t.push_back({"train.seed", number_key<std::uint64_t>("train.seed",
                                                         [](RunConfig& c) -> std::uint64_t& { return c.train.seed; })});
    add_train_keys(t, "finetune.", &RunConfig::finetune);
    t.push_back({"finetune.seed", number_key<std::uint64_t>(
                                      "finetune.seed", [](RunConfig& c) -> std::uint64_t& { return c.finetune.seed; })});
    dbl("link.bandwidth_bps", [](RunConfig& c) -> double& { return c.link.bandwidth_bps; });
    dbl("link.rtt_s", [](RunConfig& c) -> double& { return c.link.rtt_s; });
    dbl("link.overhead_bytes", [](RunConfig& c) -> double& { return c.link.overhead_bytes; });
    return t;
  }();
  return table;
}

}  // namespace detail

inline void RunConfig::set(const std::string& key, const std::string& value) {
  for (const auto& [k, h] : detail::key_table())
    if (k == key) {
      h.set(*this, value);
      // The dataset's class count and image size follow the model.
      data.num_classes = model.num_classes;
      data.image_size = model.image_size;
      vq.feature_dim = model.embed_dim;
      return;
    }
  throw Error(ErrorKind::config, "unknown config key '" + key + "'");
}

inline std::vector<std::pair<std::string, std::string>> RunConfig::resolved() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& [k, h] : detail::key_table()) out.emplace_back(k, h.get(*this));
  return out;
}

}  // namespace avq
