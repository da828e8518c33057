// mpe: mixed-precision embedding compression pipeline.
//
// Subcommands cover the full workflow:
//   synth -> ingest -> train (baseline | search | retrain | retrain_lth |
//   no_retrain_eval) -> sample -> pack -> eval -> report
//
// Every run writes its resolved configuration next to its outputs, all
// binary artifacts carry versioned magics and the catalog hash, and a rerun
// with the same seed overwrites outputs with identical bytes.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mpe/catalog.hpp"
#include "mpe/config.hpp"
#include "mpe/packed_table.hpp"
#include "mpe/precision.hpp"
#include "mpe/serving.hpp"
#include "mpe/synth.hpp"
#include "mpe/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr const char* kCatalogFile = "catalog.bin";
constexpr const char* kSplitsFile = "splits.bin";
constexpr const char* kCheckpointFile = "checkpoint.bin";
constexpr const char* kMetricsFile = "metrics.jsonl";
constexpr const char* kResolvedFile = "resolved.cfg";
constexpr const char* kPrecisionFile = "precision.tsv";
constexpr const char* kPrecisionSummaryFile = "precision_summary.json";
constexpr const char* kPackedFile = "packed.bin";
constexpr const char* kPackReportFile = "pack_report.json";

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
  os << text;
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string join_u32(const std::vector<std::uint32_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// ---- synth ----

int cmd_synth(const std::string& spec_path, const std::string& out_dir) {
  auto kv = mpe::KeyValueConfig::parse_file(spec_path);
  kv.reject_unknown_keys({"num_fields", "features_per_field", "zipf_exponent",
                          "informative_fraction", "freq_importance_correlation", "logit_scale",
                          "noise_std", "intercept", "num_samples", "seed"});
  mpe::SynthSpec spec;
  spec.num_fields = static_cast<std::uint32_t>(kv.get_int("num_fields", spec.num_fields));
  spec.features_per_field =
      static_cast<std::uint32_t>(kv.get_int("features_per_field", spec.features_per_field));
  spec.zipf_exponent = kv.get_double("zipf_exponent", spec.zipf_exponent);
  spec.informative_fraction = kv.get_double("informative_fraction", spec.informative_fraction);
  spec.freq_importance_correlation =
      kv.get_double("freq_importance_correlation", spec.freq_importance_correlation);
  spec.logit_scale = kv.get_double("logit_scale", spec.logit_scale);
  spec.noise_std = kv.get_double("noise_std", spec.noise_std);
  spec.intercept = kv.get_double("intercept", spec.intercept);
  spec.num_samples = static_cast<std::uint64_t>(kv.get_int("num_samples", spec.num_samples));
  spec.seed = static_cast<std::uint64_t>(kv.get_int("seed", spec.seed));

  fs::create_directories(out_dir);
  std::ofstream tsv(fs::path(out_dir) / "data.tsv", std::ios::binary);
  std::ofstream sidecar(fs::path(out_dir) / "importance.tsv", std::ios::binary);
  if (!tsv || !sidecar) throw std::runtime_error("cannot open output files in " + out_dir);
  mpe::generate(spec, tsv, sidecar);

  mpe::KeyValueConfig resolved;
  resolved.set("num_fields", std::to_string(spec.num_fields));
  resolved.set("features_per_field", std::to_string(spec.features_per_field));
  resolved.set("zipf_exponent", fmt_double(spec.zipf_exponent));
  resolved.set("informative_fraction", fmt_double(spec.informative_fraction));
  resolved.set("freq_importance_correlation", fmt_double(spec.freq_importance_correlation));
  resolved.set("logit_scale", fmt_double(spec.logit_scale));
  resolved.set("noise_std", fmt_double(spec.noise_std));
  resolved.set("intercept", fmt_double(spec.intercept));
  resolved.set("num_samples", std::to_string(spec.num_samples));
  resolved.set("seed", std::to_string(spec.seed));
  std::ostringstream rc;
  resolved.serialize(rc);
  write_text(fs::path(out_dir) / "resolved_synth.cfg", rc.str());

  std::cout << "synth: wrote " << spec.num_samples << " rows to " << out_dir << "/data.tsv\n";
  return 0;
}

// ---- ingest ----

int cmd_ingest(const std::string& tsv_path, const std::string& out_dir, std::uint64_t seed,
               std::uint32_t embedding_dim, const std::string& fields_csv) {
  std::ifstream probe(tsv_path);
  if (!probe) throw std::runtime_error("cannot open " + tsv_path);
  std::vector<std::string> fields;
  if (!fields_csv.empty()) {
    std::istringstream is(fields_csv);
    std::string piece;
    while (std::getline(is, piece, ',')) fields.push_back(piece);
  } else {
    std::string first;
    if (!std::getline(probe, first)) throw std::runtime_error("ingest: empty input");
    const auto cols = static_cast<std::size_t>(std::count(first.begin(), first.end(), '\t'));
    for (std::size_t f = 0; f < cols; ++f) fields.push_back("f" + std::to_string(f));
    probe.clear();
    probe.seekg(0);
  }

  auto result = mpe::ingest(probe, fields, seed, embedding_dim);
  const std::uint64_t hash = result.catalog.hash();

  fs::create_directories(out_dir);
  mpe::save_catalog((fs::path(out_dir) / kCatalogFile).string(), result.catalog);
  mpe::save_dataset((fs::path(out_dir) / kSplitsFile).string(), result.data, hash);

  mpe::KeyValueConfig resolved;
  resolved.set("tsv", tsv_path);
  resolved.set("seed", std::to_string(seed));
  resolved.set("embedding_dim", std::to_string(embedding_dim));
  resolved.set("fields",
               fields_csv.empty() ? "auto:" + std::to_string(fields.size()) : fields_csv);
  char hashbuf[32];
  std::snprintf(hashbuf, sizeof(hashbuf), "%016llx", static_cast<unsigned long long>(hash));
  resolved.set("catalog_hash", hashbuf);
  std::ostringstream rc;
  resolved.serialize(rc);
  write_text(fs::path(out_dir) / "resolved_ingest.cfg", rc.str());

  std::cout << "ingest: " << result.catalog.num_features() << " features over " << fields.size()
            << " fields; splits " << result.data.train.size() << "/" << result.data.valid.size()
            << "/" << result.data.test.size() << "; catalog_hash " << hashbuf << "\n";
  return 0;
}

// ---- shared loaders ----

struct LoadedData {
  mpe::FeatureCatalog catalog;
  mpe::Dataset data;
};

LoadedData load_data_dir(const std::string& data_dir) {
  LoadedData out;
  out.catalog = mpe::load_catalog((fs::path(data_dir) / kCatalogFile).string());
  out.data = mpe::load_dataset((fs::path(data_dir) / kSplitsFile).string(), out.catalog.hash());
  return out;
}

mpe::SampledPrecision load_precision(const std::string& path, const mpe::GroupAssignment& groups,
                                     std::size_t n) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  mpe::SampledPrecision sp;
  sp.bit_of_group.assign(groups.num_groups(), -1);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw std::runtime_error("precision file line " + std::to_string(line_no) +
                               ": expected group\\tbit");
    const std::size_t k = std::stoull(line.substr(0, tab));
    const int b = std::stoi(line.substr(tab + 1));
    if (k >= sp.bit_of_group.size())
      throw std::runtime_error("precision file: group index " + std::to_string(k) +
                               " out of range");
    sp.bit_of_group[k] = b;
  }
  double weighted = 0.0;
  for (std::size_t k = 0; k < sp.bit_of_group.size(); ++k) {
    if (sp.bit_of_group[k] < 0)
      throw std::runtime_error("precision file: missing bit-width for group " + std::to_string(k));
    weighted += static_cast<double>(sp.bit_of_group[k]) * groups.sizes[k];
  }
  sp.avg_bits = weighted / static_cast<double>(n);
  return sp;
}

// ---- train ----

const std::set<std::string>& train_config_keys() {
  static const std::set<std::string> keys{
      "phase",      "learning_rate",  "gamma_learning_rate", "weight_decay",
      "batch_size", "epochs",         "lambda",              "tau",
      "group_size", "candidate_bits", "hidden_sizes",        "seed",
      "data_dir",   "out_dir",        "prior",               "precision"};
  return keys;
}

int cmd_train(const std::string& config_path, std::string phase_flag, std::string data_dir,
              std::string out_dir, std::string prior_path, std::string precision_path) {
  auto kv = mpe::KeyValueConfig::parse_file(config_path);
  kv.reject_unknown_keys(train_config_keys());

  mpe::TrainConfig cfg;
  const std::string phase_str = !phase_flag.empty() ? phase_flag : kv.get_string("phase", "");
  if (phase_str.empty()) throw std::runtime_error("train: missing --phase (or phase= in config)");
  cfg.phase = mpe::phase_from_name(phase_str);
  cfg.learning_rate = kv.get_double("learning_rate", cfg.learning_rate);
  if (kv.has("gamma_learning_rate"))
    cfg.gamma_learning_rate = kv.get_double("gamma_learning_rate", 0.0);
  cfg.weight_decay = kv.get_double("weight_decay", cfg.weight_decay);
  cfg.batch_size = static_cast<std::uint32_t>(kv.get_int("batch_size", cfg.batch_size));
  cfg.epochs = static_cast<std::uint32_t>(kv.get_int("epochs", cfg.epochs));
  cfg.lambda = kv.get_double("lambda", cfg.lambda);
  cfg.tau = kv.get_double("tau", cfg.tau);
  cfg.group_size = static_cast<std::uint32_t>(kv.get_int("group_size", cfg.group_size));
  cfg.candidate_bits = kv.get_int_list("candidate_bits", cfg.candidate_bits);
  {
    auto hs = kv.get_int_list("hidden_sizes", {});
    if (!hs.empty()) {
      cfg.hidden_sizes.clear();
      for (int h : hs) cfg.hidden_sizes.push_back(static_cast<std::uint32_t>(h));
    }
  }
  cfg.seed = static_cast<std::uint64_t>(kv.get_int("seed", cfg.seed));

  if (data_dir.empty()) data_dir = kv.get_string("data_dir", "");
  if (out_dir.empty()) out_dir = kv.get_string("out_dir", "");
  if (prior_path.empty()) prior_path = kv.get_string("prior", "");
  if (precision_path.empty()) precision_path = kv.get_string("precision", "");
  if (data_dir.empty()) throw std::runtime_error("train: missing --data-dir");
  if (out_dir.empty()) throw std::runtime_error("train: missing --out-dir");

  auto loaded = load_data_dir(data_dir);
  auto groups = mpe::group_by_frequency(loaded.catalog, cfg.group_size);

  std::optional<mpe::Checkpoint> prior;
  if (!prior_path.empty()) prior = mpe::load_checkpoint(prior_path);
  // The retraining protocol always starts from a search checkpoint.
  if (cfg.phase == mpe::Phase::retrain && !prior)
    throw std::runtime_error("train: retrain requires --prior (a search checkpoint)");

  std::optional<mpe::SampledPrecision> sampled;
  if (!precision_path.empty())
    sampled = load_precision(precision_path, groups, loaded.catalog.num_features());

  auto result = mpe::run_phase(cfg, loaded.catalog, groups, loaded.data, prior, sampled);

  fs::create_directories(out_dir);
  mpe::save_checkpoint((fs::path(out_dir) / kCheckpointFile).string(), result.checkpoint);

  std::string jsonl;
  for (const auto& m : result.log) {
    json row;
    row["phase"] = mpe::phase_name(m.phase);
    row["epoch"] = m.epoch;
    row["train_loss"] = m.train_loss;
    row["valid_auc"] = m.valid_auc;
    row["valid_logloss"] = m.valid_logloss;
    row["avg_expected_bits"] = m.avg_expected_bits;
    jsonl += row.dump() + "\n";
  }
  write_text(fs::path(out_dir) / kMetricsFile, jsonl);

  mpe::KeyValueConfig resolved;
  resolved.set("phase", mpe::phase_name(cfg.phase));
  resolved.set("learning_rate", fmt_double(cfg.learning_rate));
  resolved.set("gamma_learning_rate", fmt_double(cfg.gamma_lr()));
  resolved.set("weight_decay", fmt_double(cfg.weight_decay));
  resolved.set("batch_size", std::to_string(cfg.batch_size));
  resolved.set("epochs", std::to_string(cfg.epochs));
  resolved.set("lambda", fmt_double(cfg.lambda));
  resolved.set("tau", fmt_double(cfg.tau));
  resolved.set("group_size", std::to_string(cfg.group_size));
  resolved.set("candidate_bits", join_ints(cfg.candidate_bits));
  resolved.set("hidden_sizes", join_u32(cfg.hidden_sizes));
  resolved.set("seed", std::to_string(cfg.seed));
  resolved.set("data_dir", data_dir);
  resolved.set("out_dir", out_dir);
  if (!prior_path.empty()) resolved.set("prior", prior_path);
  if (!precision_path.empty()) resolved.set("precision", precision_path);
  char hashbuf[32];
  std::snprintf(hashbuf, sizeof(hashbuf), "%016llx",
                static_cast<unsigned long long>(result.checkpoint.catalog_hash));
  resolved.set("catalog_hash", hashbuf);
  std::ostringstream rc;
  resolved.serialize(rc);
  write_text(fs::path(out_dir) / kResolvedFile, rc.str());

  std::cout << "train[" << mpe::phase_name(cfg.phase) << "]: best valid AUC "
            << fmt_double(result.checkpoint.best_valid_auc) << " after "
            << result.checkpoint.epochs_run << " epochs -> " << out_dir << "/" << kCheckpointFile
            << "\n";
  return 0;
}

// ---- sample ----

int cmd_sample(const std::string& ckpt_path, const std::string& out_dir) {
  auto ckpt = mpe::load_checkpoint(ckpt_path);
  if (ckpt.gamma.empty())
    throw std::runtime_error("sample: checkpoint has no bit-width distribution (not a search run)");
  mpe::CandidateSet cands(ckpt.candidate_bits);
  mpe::GroupPrecisionState state;
  state.groups = ckpt.groups;
  state.num_candidates = cands.size();
  state.tau = ckpt.tau;
  state.gamma = ckpt.gamma;

  auto groups = mpe::contiguous_groups(ckpt.n, ckpt.group_size);
  auto sampled = mpe::sample_precision(state, cands, groups);

  fs::create_directories(out_dir);
  std::string tsv;
  for (std::size_t k = 0; k < sampled.bit_of_group.size(); ++k)
    tsv += std::to_string(k) + "\t" + std::to_string(sampled.bit_of_group[k]) + "\n";
  write_text(fs::path(out_dir) / kPrecisionFile, tsv);

  json summary;
  summary["avg_bits"] = sampled.avg_bits;
  summary["ratio"] = sampled.avg_bits / 32.0;  // payload-only estimate; pack reports exact bytes
  json hist = json::object();
  std::map<int, std::uint64_t> counts;
  for (std::size_t k = 0; k < sampled.bit_of_group.size(); ++k)
    counts[sampled.bit_of_group[k]] += groups.sizes[k];
  for (const auto& [bit, count] : counts) hist[std::to_string(bit)] = count;
  summary["per_bit_histogram"] = hist;
  write_text(fs::path(out_dir) / kPrecisionSummaryFile, summary.dump(2) + "\n");

  std::cout << "sample: avg_bits " << fmt_double(sampled.avg_bits) << " over "
            << sampled.bit_of_group.size() << " groups -> " << out_dir << "/" << kPrecisionFile
            << "\n";
  return 0;
}

// ---- pack ----

int cmd_pack(const std::string& ckpt_path, const std::string& precision_path,
             const std::string& out_dir) {
  auto ckpt = mpe::load_checkpoint(ckpt_path);
  auto groups = mpe::contiguous_groups(ckpt.n, ckpt.group_size);
  auto sampled = load_precision(precision_path, groups, ckpt.n);

  auto table = mpe::PackedTable::pack(ckpt.embeddings, sampled, ckpt.quant, groups,
                                      ckpt.catalog_hash, ckpt.candidate_bits);
  fs::create_directories(out_dir);
  table.save((fs::path(out_dir) / kPackedFile).string());

  const auto report = table.report();
  json j;
  j["packed_bytes"] = report.packed_bytes;
  j["fp32_bytes"] = report.fp32_bytes;
  j["ratio"] = report.ratio;
  j["avg_bits"] = report.avg_bits;
  json hist = json::object();
  for (const auto& [bit, count] : report.per_bit_feature_counts)
    hist[std::to_string(bit)] = count;
  j["per_bit_feature_counts"] = hist;
  write_text(fs::path(out_dir) / kPackReportFile, j.dump(2) + "\n");

  std::cout << "pack: ratio " << fmt_double(report.ratio) << " (avg_bits "
            << fmt_double(report.avg_bits) << ") -> " << out_dir << "/" << kPackedFile << "\n";
  return 0;
}

// ---- eval ----

int cmd_eval(const std::string& ckpt_path, const std::string& packed_path,
             const std::string& data_dir, const std::string& split_name, std::string out_path) {
  auto loaded = load_data_dir(data_dir);
  const mpe::SampleSet* split = nullptr;
  if (split_name == "train") split = &loaded.data.train;
  else if (split_name == "valid") split = &loaded.data.valid;
  else if (split_name == "test") split = &loaded.data.test;
  else throw std::runtime_error("eval: unknown split \"" + split_name + "\"");

  auto ckpt = mpe::load_checkpoint(ckpt_path);
  if (ckpt.catalog_hash != loaded.catalog.hash())
    throw std::runtime_error("eval: catalog hash mismatch between checkpoint and data");

  mpe::EvalMetrics metrics;
  std::string source;
  if (!packed_path.empty()) {
    auto table = mpe::PackedTable::load(packed_path);
    if (table.catalog_hash != loaded.catalog.hash())
      throw std::runtime_error("eval: catalog hash mismatch between packed table and data");
    metrics = mpe::evaluate_packed(ckpt.mlp, table, *split);
    source = "packed";
  } else {
    auto groups = mpe::group_by_frequency(loaded.catalog, ckpt.group_size);
    metrics = mpe::evaluate_checkpoint(ckpt, loaded.catalog, groups, loaded.data, *split);
    source = "checkpoint";
  }

  json j;
  j["split"] = split_name;
  j["source"] = source;
  j["auc"] = metrics.auc;
  j["logloss"] = metrics.logloss;
  j["samples"] = split->size();
  const std::string text = j.dump(2) + "\n";
  std::cout << text;
  if (out_path.empty())
    out_path = (fs::path(ckpt_path).parent_path() / ("eval_" + split_name + ".json")).string();
  write_text(out_path, text);
  return 0;
}

// ---- dump ----

int cmd_dump(const std::string& packed_path, std::size_t max_groups) {
  auto table = mpe::PackedTable::load(packed_path);
  table.dump(std::cout, max_groups);
  return 0;
}

// ---- report ----

int cmd_report(const std::string& run_dir, std::string out_dir) {
  if (out_dir.empty()) out_dir = run_dir;
  struct Row {
    std::string name, phase;
    double lambda = 0.0;
    std::optional<double> auc, logloss, ratio, avg_bits;
  };
  std::vector<Row> rows;
  std::vector<fs::path> subdirs;
  for (const auto& entry : fs::directory_iterator(run_dir))
    if (entry.is_directory()) subdirs.push_back(entry.path());
  std::sort(subdirs.begin(), subdirs.end());

  for (const auto& dir : subdirs) {
    const auto resolved = dir / kResolvedFile;
    if (!fs::exists(resolved)) continue;
    auto kv = mpe::KeyValueConfig::parse_file(resolved.string());
    Row row;
    row.name = dir.filename().string();
    row.phase = kv.get_string("phase", "?");
    row.lambda = kv.get_double("lambda", 0.0);
    const auto eval_path = dir / "eval_test.json";
    if (fs::exists(eval_path)) {
      std::ifstream is(eval_path);
      json j = json::parse(is);
      row.auc = j.at("auc").get<double>();
      row.logloss = j.at("logloss").get<double>();
    }
    const auto pack_path = dir / kPackReportFile;
    if (fs::exists(pack_path)) {
      std::ifstream is(pack_path);
      json j = json::parse(is);
      row.ratio = j.at("ratio").get<double>();
      row.avg_bits = j.at("avg_bits").get<double>();
    } else if (row.phase == "baseline") {
      row.ratio = 1.0;
      row.avg_bits = 32.0;
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error("report: no runs found under " + run_dir);

  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    if (a.lambda != b.lambda) return a.lambda < b.lambda;
    return a.name < b.name;
  });

  auto cell = [](const std::optional<double>& v) { return v ? fmt_double(*v) : std::string("-"); };
  std::string tsv = "run\tphase\tlambda\ttest_auc\ttest_logloss\tratio\tavg_bits\n";
  for (const auto& r : rows) {
    tsv += r.name + "\t" + r.phase + "\t" + fmt_double(r.lambda) + "\t" + cell(r.auc) + "\t" +
           cell(r.logloss) + "\t" + cell(r.ratio) + "\t" + cell(r.avg_bits) + "\n";
  }
  fs::create_directories(out_dir);
  write_text(fs::path(out_dir) / "report.tsv", tsv);

  std::vector<const Row*> curve;
  for (const auto& r : rows)
    if (r.auc && r.ratio) curve.push_back(&r);
  std::sort(curve.begin(), curve.end(),
            [](const Row* a, const Row* b) { return *a->ratio < *b->ratio; });
  std::string curve_tsv = "ratio\ttest_auc\tlambda\trun\n";
  for (const auto* r : curve)
    curve_tsv += fmt_double(*r->ratio) + "\t" + fmt_double(*r->auc) + "\t" +
                 fmt_double(r->lambda) + "\t" + r->name + "\n";
  write_text(fs::path(out_dir) / "curve.tsv", curve_tsv);

  std::cout << tsv;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mpe: mixed-precision embedding compression pipeline"};
  app.require_subcommand(1);

  std::string spec_path, out_dir, tsv_path, fields_csv, config_path, phase, data_dir, prior_path;
  std::string precision_path, ckpt_path, packed_path, split_name = "test", eval_out, run_dir;
  std::uint64_t seed = 1;
  std::uint32_t embedding_dim = 16;
  std::size_t max_groups = 32;

  auto* synth = app.add_subcommand("synth", "generate a synthetic click log + importance sidecar");
  synth->add_option("--spec", spec_path, "synth spec file (key = value)")->required();
  synth->add_option("--out-dir", out_dir, "output directory")->required();

  auto* ingest = app.add_subcommand("ingest", "build catalog and 8:1:1 splits from a TSV log");
  ingest->add_option("--tsv", tsv_path, "input TSV (label\\ttok1\\t...)")->required();
  ingest->add_option("--out-dir", out_dir, "output directory")->required();
  ingest->add_option("--seed", seed, "split shuffle seed");
  ingest->add_option("--embedding-dim", embedding_dim, "embedding dimension");
  ingest->add_option("--fields", fields_csv,
                     "comma-separated field names (default: derived from the first row)");

  auto* train = app.add_subcommand("train", "run one training phase");
  train->add_option("--config", config_path, "run config file")->required();
  train->add_option("--phase", phase, "baseline|search|retrain|retrain_lth|no_retrain_eval");
  train->add_option("--data-dir", data_dir, "directory with catalog.bin + splits.bin");
  train->add_option("--out-dir", out_dir, "output directory");
  train->add_option("--prior", prior_path, "prior checkpoint (search, for retrain phases)");
  train->add_option("--precision", precision_path, "sampled precision file (retrain phases)");

  auto* sample = app.add_subcommand("sample", "sample bit-widths from a search checkpoint");
  sample->add_option("--checkpoint", ckpt_path, "search checkpoint")->required();
  sample->add_option("--out-dir", out_dir, "output directory")->required();

  auto* pack = app.add_subcommand("pack", "pack a checkpoint into the low-precision store");
  pack->add_option("--checkpoint", ckpt_path, "retrained checkpoint")->required();
  pack->add_option("--precision", precision_path, "sampled precision file")->required();
  pack->add_option("--out-dir", out_dir, "output directory")->required();

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint or packed table on a split");
  eval->add_option("--checkpoint", ckpt_path, "checkpoint (supplies the interaction net)")
      ->required();
  eval->add_option("--packed", packed_path, "packed table (embedding lookups served from it)");
  eval->add_option("--data-dir", data_dir, "directory with catalog.bin + splits.bin")->required();
  eval->add_option("--split", split_name, "train|valid|test (default test)");
  eval->add_option("--out", eval_out,
                   "output JSON path (default: eval_<split>.json beside the checkpoint)");

  auto* dump = app.add_subcommand("dump", "print a packed table's directory and first codes");
  dump->add_option("--packed", packed_path, "packed table file")->required();
  dump->add_option("--groups", max_groups, "max groups to list");

  auto* report = app.add_subcommand("report", "consolidate runs into report.tsv + curve.tsv");
  report->add_option("--run-dir", run_dir, "directory containing one subdirectory per run")
      ->required();
  report->add_option("--out-dir", out_dir, "output directory (default: run dir)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth(spec_path, out_dir);
    if (ingest->parsed()) return cmd_ingest(tsv_path, out_dir, seed, embedding_dim, fields_csv);
    if (train->parsed())
      return cmd_train(config_path, phase, data_dir, out_dir, prior_path, precision_path);
    if (sample->parsed()) return cmd_sample(ckpt_path, out_dir);
    if (pack->parsed()) return cmd_pack(ckpt_path, precision_path, out_dir);
    if (eval->parsed()) return cmd_eval(ckpt_path, packed_path, data_dir, split_name, eval_out);
    if (dump->parsed()) return cmd_dump(packed_path, max_groups);
    if (report->parsed()) return cmd_report(run_dir, out_dir);
  } catch (const std::exception& e) {
    std::cerr << "mpe-error\t" << e.what() << "\n";
    return 1;
  }
  return 0;
}
