#pragma once

// JSON run manifests, sweep expansion and the CSV / plot-data writers.
//
// Manifest layout:
//   {
//     "seed": 1, "repeat": 1,
//     "defaults": { <trial fields> },
//     "trials": [ { "id": "...", "reliability": "nc-40", <trial fields> }, ... ]
//   }
// Trial fields override `defaults` (JSON merge patch). "reliability": "all"
// expands one trial into the 11 reliability configurations.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "ncrel/harness.hpp"

namespace ncrel::manifest {

using json = nlohmann::json;
using harness::ExperimentConfig;
using harness::MetricsReport;

class ManifestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

[[noreturn]] inline void fail(const std::string& path, const std::string& what) {
  throw ManifestError(path + ": " + what);
}

inline void check_keys(const json& j, const std::string& path, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) fail(path, "expected an object");
  for (const auto& [k, _] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || a == k;
    if (!ok) fail(path + "." + k, "unknown field");
  }
}

inline void read(const json& j, const std::string& path, const char* key, double& out) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_number()) fail(path + "." + key, "expected a number");
  out = v.get<double>();
}

inline void read(const json& j, const std::string& path, const char* key, std::size_t& out) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0) fail(path + "." + key, "expected a non-negative integer");
  out = v.get<std::size_t>();
}

inline void read(const json& j, const std::string& path, const char* key, unsigned& out) {
  std::size_t v = out;
  read(j, path, key, v);
  out = static_cast<unsigned>(v);
}

inline void read(const json& j, const std::string& path, const char* key, bool& out) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_boolean()) fail(path + "." + key, "expected true or false");
  out = v.get<bool>();
}

inline void read(const json& j, const std::string& path, const char* key, std::string& out) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_string()) fail(path + "." + key, "expected a string");
  out = v.get<std::string>();
}

/// Durations are given in the unit named by the key suffix.
inline void read_ms(const json& j, const std::string& path, const char* key, sim::Time& out) {
  double v = -1.0;
  if (!j.contains(key)) return;
  read(j, path, key, v);
  out = sim::from_seconds(v / 1000.0);
}

inline void read_s(const json& j, const std::string& path, const char* key, sim::Time& out) {
  double v = -1.0;
  if (!j.contains(key)) return;
  read(j, path, key, v);
  out = sim::from_seconds(v);
}

inline void parse_channel(const json& j, const std::string& path, channel::ErasureChannelModel& m) {
  check_keys(j, path,
             {"loss", "p", "p_good", "p_bad", "good_to_bad", "bad_to_good", "rate_bps", "one_way_delay_ms",
              "ack_loss_prob", "uplink_rate_bps"});
  std::string loss = std::holds_alternative<channel::Bernoulli>(m.loss) ? "bernoulli" : "gilbert-elliott";
  read(j, path, "loss", loss);
  if (loss == "bernoulli") {
    channel::Bernoulli b = std::holds_alternative<channel::Bernoulli>(m.loss) ? std::get<channel::Bernoulli>(m.loss)
                                                                              : channel::Bernoulli{};
    read(j, path, "p", b.p);
    m.loss = b;
  } else if (loss == "gilbert-elliott") {
    channel::GilbertElliott g = std::holds_alternative<channel::GilbertElliott>(m.loss)
                                    ? std::get<channel::GilbertElliott>(m.loss)
                                    : channel::GilbertElliott{};
    read(j, path, "p_good", g.p_good);
    read(j, path, "p_bad", g.p_bad);
    read(j, path, "good_to_bad", g.good_to_bad);
    read(j, path, "bad_to_good", g.bad_to_good);
    m.loss = g;
  } else {
    fail(path + ".loss", "expected \"bernoulli\" or \"gilbert-elliott\"");
  }
  read(j, path, "rate_bps", m.rate_bps);
  read_ms(j, path, "one_way_delay_ms", m.one_way_delay);
  read(j, path, "ack_loss_prob", m.ack_loss_prob);
  read(j, path, "uplink_rate_bps", m.uplink_rate_bps);
}

inline void parse_codec(const json& j, const std::string& path, codec::CodecParams& c) {
  check_keys(j, path, {"lt", "ti_ms", "lm", "nr", "nk", "nm", "tr_ms"});
  read(j, path, "lt", c.lt);
  read_ms(j, path, "ti_ms", c.ti);
  read(j, path, "lm", c.lm);
  read(j, path, "nr", c.nr);
  read(j, path, "nk", c.nk);
  read(j, path, "nm", c.nm);
  read_ms(j, path, "tr_ms", c.tr);
}

inline void parse_harq(const json& j, const std::string& path, channel::HarqConfig& h) {
  check_keys(j, path, {"max_retx", "ul_ack_delay_frames", "dl_ack_delay_frames", "frame_ms", "in_order"});
  read(j, path, "max_retx", h.max_retx);
  read(j, path, "ul_ack_delay_frames", h.ul_ack_delay_frames);
  read(j, path, "dl_ack_delay_frames", h.dl_ack_delay_frames);
  read_ms(j, path, "frame_ms", h.frame);
  read(j, path, "in_order", h.in_order);
}

inline void parse_arq(const json& j, const std::string& path, channel::ArqConfig& a) {
  check_keys(j, path,
             {"retry_timeout_ms", "block_size", "window_size", "block_lifetime_ms", "in_order", "rx_purge_timeout_ms",
              "sync_loss_timeout_ms", "feedback_bytes"});
  read_ms(j, path, "retry_timeout_ms", a.retry_timeout);
  read(j, path, "block_size", a.block_size);
  read(j, path, "window_size", a.window_size);
  read_ms(j, path, "block_lifetime_ms", a.block_lifetime);
  read(j, path, "in_order", a.in_order);
  read_ms(j, path, "rx_purge_timeout_ms", a.rx_purge_timeout);
  read_ms(j, path, "sync_loss_timeout_ms", a.sync_loss_timeout);
  read(j, path, "feedback_bytes", a.feedback_bytes);
}

}  // namespace detail

/// Parses one trial object (already merged with defaults) into a config.
/// Returns the reliability string separately so "all" can be expanded.
inline ExperimentConfig parse_trial(const json& j, const std::string& path, std::string& reliability) {
  using namespace detail;
  check_keys(j, path,
             {"id", "reliability", "kind", "offered_load", "packet_size", "duration_s", "file_size", "np", "seed",
              "drain_s", "status_timeout_s", "max_rounds", "nc_best_margin", "channel", "codec", "harq", "arq"});
  ExperimentConfig c;
  read(j, path, "id", c.id);
  reliability = "raw";
  read(j, path, "reliability", reliability);
  std::string kind = "stream";
  read(j, path, "kind", kind);
  if (kind == "stream")
    c.kind = harness::TrialKind::kStream;
  else if (kind == "file")
    c.kind = harness::TrialKind::kFile;
  else
    fail(path + ".kind", "expected \"stream\" or \"file\"");
  read(j, path, "offered_load", c.offered_load_bps);
  read(j, path, "packet_size", c.packet_size);
  read_s(j, path, "duration_s", c.duration);
  read(j, path, "file_size", c.file_size);
  read(j, path, "np", c.np);
  read(j, path, "seed", c.seed);
  read_s(j, path, "drain_s", c.drain);
  read_s(j, path, "status_timeout_s", c.status_timeout);
  read(j, path, "max_rounds", c.max_rounds);
  read(j, path, "nc_best_margin", c.nc_best_margin);
  if (j.contains("channel")) parse_channel(j.at("channel"), path + ".channel", c.channel);
  if (j.contains("codec")) parse_codec(j.at("codec"), path + ".codec", c.codec);
  if (j.contains("harq")) parse_harq(j.at("harq"), path + ".harq", c.harq);
  if (j.contains("arq")) parse_arq(j.at("arq"), path + ".arq", c.arq);
  if (reliability != "all") {
    try {
      c.reliability = harness::ReliabilitySpec::parse(reliability);
    } catch (const std::invalid_argument& e) {
      fail(path + ".reliability", e.what());
    }
  }
  return c;
}

struct RunManifest {
  std::vector<ExperimentConfig> trials;  // expanded, in output order
  std::uint64_t seed = 1;
  std::size_t repeat = 1;
};

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> repeat;
};

/// Parses and validates every trial; nothing runs if any trial is invalid.
inline RunManifest parse_manifest(const json& root, const Overrides& ov = {}) {
  using namespace detail;
  check_keys(root, "manifest", {"seed", "repeat", "defaults", "trials"});
  RunManifest m;
  read(root, "manifest", "seed", m.seed);
  read(root, "manifest", "repeat", m.repeat);
  if (ov.seed) m.seed = *ov.seed;
  if (ov.repeat) m.repeat = *ov.repeat;
  if (m.repeat < 1) fail("manifest.repeat", "must be >= 1");
  json defaults = json::object();
  if (root.contains("defaults")) {
    defaults = root.at("defaults");
    if (!defaults.is_object()) fail("manifest.defaults", "expected an object");
  }
  if (!root.contains("trials") || !root.at("trials").is_array() || root.at("trials").empty())
    fail("manifest.trials", "expected a non-empty array");

  const auto& trials = root.at("trials");
  for (std::size_t i = 0; i < trials.size(); ++i) {
    const std::string path = "manifest.trials[" + std::to_string(i) + "]";
    if (!trials[i].is_object()) fail(path, "expected an object");
    json merged = defaults;
    merged.merge_patch(trials[i]);
    std::string rel;
    auto base = parse_trial(merged, path, rel);
    if (!merged.contains("id")) base.id = "t" + std::to_string(i);
    if (!merged.contains("seed")) base.seed = m.seed;

    std::vector<ExperimentConfig> expanded;
    if (rel == "all") {
      for (const auto& spec : harness::reliability_table()) {
        auto c = base;
        c.reliability = spec;
        c.id = base.id + "/" + spec.name();
        expanded.push_back(std::move(c));
      }
    } else {
      expanded.push_back(base);
    }
    for (auto& c : expanded) {
      try {
        c.validate();
      } catch (const std::exception& e) {
        fail(path, e.what());
      }
      for (std::size_t k = 0; k < m.repeat; ++k) {
        auto r = c;
        if (k > 0) {
          r.seed = sim::derive_seed(c.seed, k);
          r.id = c.id + "#" + std::to_string(k);
        }
        m.trials.push_back(std::move(r));
      }
    }
  }
  return m;
}

inline RunManifest load_manifest(const std::string& file, const Overrides& ov = {}) {
  std::ifstream in(file);
  if (!in) throw ManifestError(file + ": cannot open");
  json root;
  try {
    root = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ManifestError(file + ": " + e.what());
  }
  return parse_manifest(root, ov);
}

// ---------------------------------------------------------------------------
// Sweeps

enum class SweepParam { kNm, kP, kOfferedLoad, kNp };

inline SweepParam parse_sweep_param(const std::string& s) {
  if (s == "Nm" || s == "nm") return SweepParam::kNm;
  if (s == "p") return SweepParam::kP;
  if (s == "offered_load") return SweepParam::kOfferedLoad;
  if (s == "Np" || s == "np") return SweepParam::kNp;
  throw ManifestError("--param: expected one of Nm, p, offered_load, Np");
}

inline std::string sweep_param_name(SweepParam p) {
  switch (p) {
    case SweepParam::kNm: return "Nm";
    case SweepParam::kP: return "p";
    case SweepParam::kOfferedLoad: return "offered_load";
    case SweepParam::kNp: return "Np";
  }
  return "?";
}

/// One config per value, all sharing the base seed so rows are paired.
inline std::vector<ExperimentConfig> expand_sweep(const ExperimentConfig& base, SweepParam param,
                                                  const std::vector<double>& values) {
  if (values.empty()) throw ManifestError("--values: empty value list");
  std::vector<ExperimentConfig> out;
  for (double v : values) {
    auto c = base;
    char label[64];
    std::snprintf(label, sizeof label, "%s=%g", sweep_param_name(param).c_str(), v);
    c.id = base.id + "/" + label;
    switch (param) {
      case SweepParam::kNm:
        if (v < 0 || v != static_cast<double>(static_cast<std::size_t>(v)))
          throw ManifestError("--values: Nm must be a non-negative integer");
        c.reliability = {harness::Reliability::kNc, static_cast<std::size_t>(v)};
        break;
      case SweepParam::kP:
        if (!std::holds_alternative<channel::Bernoulli>(c.channel.loss))
          throw ManifestError("--param p: requires a bernoulli channel");
        c.channel.loss = channel::Bernoulli{v};
        break;
      case SweepParam::kOfferedLoad:
        c.offered_load_bps = v;
        break;
      case SweepParam::kNp:
        if (v < 1 || v != static_cast<double>(static_cast<std::size_t>(v)))
          throw ManifestError("--values: Np must be a positive integer");
        c.np = static_cast<std::size_t>(v);
        break;
    }
    try {
      c.validate();
    } catch (const std::exception& e) {
      throw ManifestError(c.id + ": " + e.what());
    }
    out.push_back(std::move(c));
  }
  return out;
}

inline std::vector<double> parse_values(const std::string& list) {
  std::vector<double> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t pos = 0;
    double v = 0;
    try {
      v = std::stod(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != item.size()) throw ManifestError("--values: cannot parse '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw ManifestError("--values: empty value list");
  return out;
}

// ---------------------------------------------------------------------------
// Output

inline const std::vector<std::string>& csv_columns() {
  static const std::vector<std::string> kColumns{
      "config_id",     "reliability",   "nm",           "p",           "offered_load", "kind",
      "T",             "L",             "loss_pct",     "R",           "R_exact",      "TLR",
      "transfer_delay", "rounds",       "seed",         "sent",        "delivered",    "lost",
      "wire_packets",  "wire_erased",   "nc_blocks",    "nc_decoded",  "nc_dropped",   "nc_extracted",
      "nc_stale",      "acks_sent",     "acks_lost",    "decode_errors", "harq_attempts", "harq_lost",
      "arq_retx",      "arq_discarded", "arq_sync_resets", "arq_window_stalls", "corrupt", "duplicates",
      "error"};
  return kColumns;
}

namespace detail {

inline std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

}  // namespace detail

inline void write_csv_header(std::ostream& os) {
  const auto& cols = csv_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
  os << '\n';
}

inline void write_csv_row(std::ostream& os, const MetricsReport& r) {
  using detail::num;
  const auto& k = r.counters;
  const bool ok = r.error.empty();
  std::vector<std::string> f{
      detail::csv_escape(r.id),
      r.reliability,
      std::to_string(r.nm),
      num(r.p),
      num(r.offered_load),
      r.kind == harness::TrialKind::kStream ? "stream" : "file",
      ok ? num(r.throughput) : "",
      ok ? num(r.loss_bps) : "",
      ok ? num(r.loss_pct) : "",
      ok ? num(r.redundancy) : "",
      ok ? num(r.redundancy_exact) : "",
      !ok ? "" : r.tlr_value ? num(*r.tlr_value) : "saturated",
      r.transfer_delay ? num(*r.transfer_delay) : "",
      std::to_string(r.rounds),
      std::to_string(r.seed),
      std::to_string(r.sent),
      std::to_string(r.delivered),
      std::to_string(r.lost),
      std::to_string(k.wire_packets),
      std::to_string(k.wire_erased),
      std::to_string(k.nc_blocks),
      std::to_string(k.nc_decoded),
      std::to_string(k.nc_dropped),
      std::to_string(k.nc_extracted),
      std::to_string(k.nc_stale),
      std::to_string(k.acks_sent),
      std::to_string(k.acks_lost),
      std::to_string(k.decode_errors),
      std::to_string(k.harq_attempts),
      std::to_string(k.harq_lost),
      std::to_string(k.arq_retx),
      std::to_string(k.arq_discarded),
      std::to_string(k.arq_sync_resets),
      std::to_string(k.arq_window_stalls),
      std::to_string(k.corrupt),
      std::to_string(k.duplicates),
      detail::csv_escape(r.error)};
  for (std::size_t i = 0; i < f.size(); ++i) os << (i ? "," : "") << f[i];
  os << '\n';
}

/// Whitespace-separated columns for gnuplot and friends; "nan" for a saturated TLR.
inline void write_plot_data(std::ostream& os, SweepParam param, const std::vector<double>& xs,
                            const std::vector<MetricsReport>& rows) {
  os << "# " << sweep_param_name(param) << " T_bps L_bps loss_pct R_bps TLR transfer_delay_s\n";
  for (std::size_t i = 0; i < rows.size() && i < xs.size(); ++i) {
    const auto& r = rows[i];
    os << xs[i] << ' ' << detail::num(r.throughput) << ' ' << detail::num(r.loss_bps) << ' '
       << detail::num(r.loss_pct) << ' ' << detail::num(r.redundancy) << ' '
       << (r.tlr_value ? detail::num(*r.tlr_value) : std::string("nan")) << ' '
       << (r.transfer_delay ? detail::num(*r.transfer_delay) : std::string("nan")) << '\n';
  }
}

}  // namespace ncrel::manifest
