#pragma once

// Sequential-experiment driver: synthetic task generation with a controllable
// domain gap, the task-by-task training loop, accuracy matrices, gate
// occupancy statistics and the text/CSV reports behind the CLI.

#include <algorithm>
#include <array>
#include <cinttypes>
#include <numeric>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rosetta/correlation.hpp"
#include "rosetta/dataset.hpp"
#include "rosetta/error.hpp"
#include "rosetta/gatednet.hpp"
#include "rosetta/lifecycle.hpp"
#include "rosetta/membank.hpp"

namespace rosetta {

// ---------------------------------------------------------------------------
// Synthetic tasks.

struct TaskSpec {
  std::size_t num_classes = 5;
  std::size_t samples_per_class = 200;
  std::size_t feature_dim = 8;
  double shift = 0.0;  // displacement of fresh class means from the base layout
  std::size_t class_overlap = 0;
  std::uint64_t seed = 1;
  double spread = 0.5;  // per-dimension std of the base class-mean layout
  double noise = 0.25;  // per-dimension std of samples around their class mean

  friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

namespace detail {

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

inline std::string exact(double v) { return fmt("%.17g", v); }

}  // namespace detail

// Class means of task t: the shared base layout (one point per local class
// index, drawn from the first spec's seed) displaced by shift_t along a
// seeded unit direction. The first class_overlap classes reuse the previous
// task's global ids and means verbatim. 80% of each class goes to train.
inline std::vector<TaskData> generate_tasks(const std::vector<TaskSpec>& specs) {
  if (specs.empty()) fail(ErrorKind::InvalidArgument, "generate_tasks: no task specs");
  const auto dim = specs.front().feature_dim;
  for (std::size_t t = 0; t < specs.size(); ++t) {
    const auto& s = specs[t];
    if (s.feature_dim < 2) fail(ErrorKind::InvalidArgument, "generate_tasks: feature_dim must be at least 2");
    if (s.feature_dim != dim) fail(ErrorKind::InvalidArgument, "generate_tasks: feature_dim differs between tasks");
    if (!(s.spread > 0.0) || !(s.noise > 0.0))
      fail(ErrorKind::InvalidArgument, "generate_tasks: spread and noise must be positive");
    if (!(s.shift >= 0.0)) fail(ErrorKind::InvalidArgument, "generate_tasks: shift must be non-negative");
    if (s.num_classes < 1 || s.samples_per_class < 2)
      fail(ErrorKind::InvalidArgument, "generate_tasks: need >= 1 class and >= 2 samples per class");
    if (s.class_overlap > s.num_classes || (t == 0 && s.class_overlap > 0) ||
        (t > 0 && s.class_overlap > specs[t - 1].num_classes))
      fail(ErrorKind::InvalidArgument, "generate_tasks: class_overlap exceeds available classes");
  }

  std::mt19937_64 layout_rng(specs.front().seed ^ 0x6c61796f7574ULL);
  std::normal_distribution<double> layout(0.0, specs.front().spread);
  std::size_t max_classes = 0;
  for (const auto& s : specs) max_classes = std::max(max_classes, s.num_classes);
  std::vector<std::vector<double>> base(max_classes, std::vector<double>(dim));
  for (auto& m : base)
    for (auto& v : m) v = layout(layout_rng);

  std::vector<TaskData> tasks;
  std::vector<std::vector<double>> prev_means;
  ClassId next_id = 0;
  for (std::size_t t = 0; t < specs.size(); ++t) {
    const auto& s = specs[t];
    auto rng = task_rng(s.seed, t + 1, 0x7461736bULL);
    std::normal_distribution<double> unit(0.0, 1.0);
    std::vector<double> dir(dim);
    double norm = 0.0;
    for (auto& v : dir) {
      v = unit(rng);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (auto& v : dir) v /= norm;

    TaskData task;
    task.task_id = t + 1;
    std::vector<std::vector<double>> means;
    for (std::size_t k = 0; k < s.num_classes; ++k) {
      if (k < s.class_overlap) {
        task.class_ids.push_back(tasks.back().class_ids[k]);
        means.push_back(prev_means[k]);
      } else {
        task.class_ids.push_back(next_id++);
        auto m = base[k];
        for (std::size_t j = 0; j < dim; ++j) m[j] += s.shift * dir[j];
        means.push_back(std::move(m));
      }
    }

    const auto n_train = s.samples_per_class - s.samples_per_class / 5;
    std::vector<double> train_x, val_x;
    std::vector<std::size_t> train_y, val_y;
    std::normal_distribution<double> noise(0.0, s.noise);
    for (std::size_t k = 0; k < s.num_classes; ++k)
      for (std::size_t i = 0; i < s.samples_per_class; ++i) {
        auto& x = i < n_train ? train_x : val_x;
        (i < n_train ? train_y : val_y).push_back(k);
        for (std::size_t j = 0; j < dim; ++j) x.push_back(means[k][j] + noise(rng));
      }
    const Dataset train{Tensor::matrix(train_y.size(), dim, std::move(train_x)), std::move(train_y)};
    const Dataset val{Tensor::matrix(val_y.size(), dim, std::move(val_x)), std::move(val_y)};
    auto shuffled = [&](const Dataset& d) {
      std::vector<std::size_t> order(d.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), rng);
      return d.gather(order);
    };
    task.train = shuffled(train);
    task.val = shuffled(val);
    tasks.push_back(std::move(task));
    prev_means = std::move(means);
  }
  return tasks;
}

// Dataset CSV: "label,x0,...,x{d-1}" header then one sample per row.
inline std::string dataset_csv(const Dataset& d) {
  std::ostringstream os;
  const auto dim = d.inputs.cols();
  os << "label";
  for (std::size_t j = 0; j < dim; ++j) os << ",x" << j;
  os << '\n';
  for (std::size_t i = 0; i < d.size(); ++i) {
    os << d.labels[i];
    for (std::size_t j = 0; j < dim; ++j) os << ',' << detail::exact(d.inputs.at(i, j));
    os << '\n';
  }
  return os.str();
}

inline Dataset parse_dataset_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("label", 0) != 0) fail(ErrorKind::Config, "dataset csv: missing header");
  const auto dim = static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
  std::vector<double> xs;
  std::vector<std::size_t> ys;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != dim + 1) fail(ErrorKind::Config, "dataset csv: row " + std::to_string(row) + " has wrong width");
    try {
      ys.push_back(std::stoul(cells[0]));
      for (std::size_t j = 1; j <= dim; ++j) xs.push_back(std::stod(cells[j]));
    } catch (const std::exception&) {
      fail(ErrorKind::Config, "dataset csv: unparsable value on row " + std::to_string(row));
    }
  }
  return Dataset{Tensor::matrix(ys.size(), dim, std::move(xs)), std::move(ys)};
}

// ---------------------------------------------------------------------------
// Experiment configuration.

enum class Method { Rosetta, Finetune };

struct ExperimentConfig {
  Method method = Method::Rosetta;
  Architecture arch;
  TrainConfig train;
  std::vector<TaskSpec> tasks;
  std::string out_dir;
};

inline ExperimentConfig parse_config(const std::string& text) {
  using nlohmann::json;
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) fail(ErrorKind::Config, "config must be a JSON object");

  static const std::vector<std::string> top_keys{
      "method",         "seed",          "out_dir",         "feature_dim",    "widths",        "embed_dim",
      "task_dim",       "gate_hidden",   "gate_bias_init",  "epochs_teacher", "epochs_student", "epochs_finetune",
      "learning_rate",  "batch_size",    "probe_count",     "lambda_sparsity", "lambda_kd",     "lambda_diversity",
      "eta",            "tasks"};
  static const std::vector<std::string> task_keys{"num_classes", "samples_per_class", "shift", "class_overlap",
                                                         "seed",        "spread",            "noise"};

  auto unknown = [](const json& obj, const std::vector<std::string>& allowed, const std::string& where) {
    std::string bad;
    for (const auto& [k, v] : obj.items())
      if (std::find(allowed.begin(), allowed.end(), k) == allowed.end()) bad += (bad.empty() ? "" : ",") + k;
    if (!bad.empty()) fail(ErrorKind::Config, "unknown config keys in " + where + ": " + bad);
  };
  unknown(doc, top_keys, "top level");
  if (!doc.contains("tasks") || !doc["tasks"].is_array() || doc["tasks"].empty())
    fail(ErrorKind::Config, "config needs a non-empty 'tasks' array");

  ExperimentConfig cfg;
  try {
    const auto method = doc.value("method", std::string("rosetta"));
    if (method == "rosetta") cfg.method = Method::Rosetta;
    else if (method == "finetune") cfg.method = Method::Finetune;
    else fail(ErrorKind::Config, "config key 'method' must be 'rosetta' or 'finetune'");
    cfg.out_dir = doc.value("out_dir", std::string());
    cfg.arch.input_dim = doc.value("feature_dim", cfg.arch.input_dim);
    cfg.arch.widths = doc.value("widths", cfg.arch.widths);
    cfg.arch.embed_dim = doc.value("embed_dim", cfg.arch.embed_dim);
    cfg.arch.task_dim = doc.value("task_dim", cfg.arch.task_dim);
    cfg.arch.gate_hidden = doc.value("gate_hidden", cfg.arch.gate_hidden);
    cfg.arch.gate_bias_init = doc.value("gate_bias_init", cfg.arch.gate_bias_init);
    auto& tc = cfg.train;
    tc.seed = doc.value("seed", tc.seed);
    tc.epochs_teacher = doc.value("epochs_teacher", tc.epochs_teacher);
    tc.epochs_student = doc.value("epochs_student", tc.epochs_student);
    tc.epochs_finetune = doc.value("epochs_finetune", tc.epochs_finetune);
    tc.learning_rate = doc.value("learning_rate", tc.learning_rate);
    tc.batch_size = doc.value("batch_size", tc.batch_size);
    tc.probe_count = doc.value("probe_count", tc.probe_count);
    tc.weights.lambda_sparsity = doc.value("lambda_sparsity", tc.weights.lambda_sparsity);
    tc.weights.lambda_kd = doc.value("lambda_kd", tc.weights.lambda_kd);
    tc.weights.lambda_diversity = doc.value("lambda_diversity", tc.weights.lambda_diversity);
    tc.weights.eta = doc.value("eta", tc.weights.eta);
    for (std::size_t i = 0; i < doc["tasks"].size(); ++i) {
      const auto& t = doc["tasks"][i];
      if (!t.is_object()) fail(ErrorKind::Config, "tasks[" + std::to_string(i) + "] must be an object");
      unknown(t, task_keys, "tasks[" + std::to_string(i) + "]");
      TaskSpec s;
      s.feature_dim = cfg.arch.input_dim;
      s.num_classes = t.value("num_classes", s.num_classes);
      s.samples_per_class = t.value("samples_per_class", s.samples_per_class);
      s.shift = t.value("shift", s.shift);
      s.class_overlap = t.value("class_overlap", s.class_overlap);
      s.seed = t.value("seed", tc.seed + i);
      s.spread = t.value("spread", s.spread);
      s.noise = t.value("noise", s.noise);
      cfg.tasks.push_back(s);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Config, std::string("config value has the wrong type: ") + e.what());
  }
  if (cfg.arch.widths.empty()) fail(ErrorKind::Config, "config key 'widths' must list at least one layer");
  try {
    cfg.train.validate();
  } catch (const Error& e) {
    fail(ErrorKind::Config, e.what());
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Plain fine-tuning baseline: the same trunk without gates or freezing,
// one head per task, trained on the task loss only.

class FinetuneBaseline {
 public:
  FinetuneBaseline(const Architecture& arch, const TrainConfig& config)
      : net_(GatedNetwork::init(arch, config.seed)), config_(config) {}

  void train(const TaskData& task) {
    auto rng = task_rng(config_.seed, task.task_id, 1);
    net_.add_head(task.task_id, task.class_ids.size(), rng());
    for (std::size_t epoch = 0; epoch < config_.epochs_student; ++epoch) {
      for (const auto& rows : epoch_batches(task.train.size(), config_.batch_size, rng)) {
        const auto batch = task.train.gather(rows);
        Graph g;
        const auto nodes = bind_network(
            g, net_, task.task_id, BindOptions{.train_layers = true, .train_head = true, .with_gate = false});
        NodeId f = g.constant(batch.inputs);
        for (const auto& l : nodes.layers) f = gated_layer_node(g, l, f, std::nullopt);
        const NodeId loss = g.softmax_cross_entropy(apply(g, nodes.head, f), batch.labels);
        masked_update(net_, g.backward(loss), config_.learning_rate, task.task_id);
      }
    }
  }

  Tensor logits(TaskId task, const Tensor& input) const {
    std::vector<Tensor> ones;
    for (const auto& l : net_.layers) ones.push_back(Tensor::filled({l.out_features()}, 1.0));
    return network_forward(net_, input, ones, task).logits;
  }

 private:
  GatedNetwork net_;
  TrainConfig config_;
};

// ---------------------------------------------------------------------------
// Reports.

// accuracy[t][i]: accuracy on task i+1 after training task t+1 (i <= t).
using AccuracyMatrix = std::vector<std::vector<double>>;

inline std::string metrics_csv(const AccuracyMatrix& acc) {
  std::ostringstream os;
  os << "after_task,eval_task,accuracy\n";
  for (std::size_t t = 0; t < acc.size(); ++t)
    for (std::size_t i = 0; i < acc[t].size(); ++i) os << t + 1 << ',' << i + 1 << ',' << detail::exact(acc[t][i]) << '\n';
  return os.str();
}

inline AccuracyMatrix parse_metrics_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "after_task,eval_task,accuracy")
    fail(ErrorKind::Config, "metrics csv: unexpected header");
  AccuracyMatrix acc;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    unsigned long long t = 0, i = 0;
    double a = 0.0;
    char tail = 0;
    if (std::sscanf(line.c_str(), "%llu,%llu,%lf%c", &t, &i, &a, &tail) != 3 || t == 0 || i == 0 || i > t)
      fail(ErrorKind::Config, "metrics csv: malformed row '" + line + "'");
    if (acc.size() < t) acc.resize(t);
    auto& row = acc[t - 1];
    if (row.size() < i) row.resize(i, std::nan(""));
    row[i - 1] = a;
  }
  for (std::size_t t = 0; t < acc.size(); ++t) {
    if (acc[t].size() != t + 1) fail(ErrorKind::Config, "metrics csv: accuracy matrix is not lower-triangular complete");
    for (double v : acc[t])
      if (std::isnan(v)) fail(ErrorKind::Config, "metrics csv: missing entry");
  }
  return acc;
}

struct ForgettingEntry {
  std::size_t after_task = 0;
  std::size_t eval_task = 0;
  double forgetting = 0.0;  // A[after][eval] - A[eval][eval]
};

struct ForgettingReport {
  std::vector<ForgettingEntry> entries;
  std::vector<std::pair<std::size_t, double>> per_task_mean;
  double mean = 0.0;
};

inline ForgettingReport forgetting_report(const AccuracyMatrix& acc) {
  ForgettingReport r;
  std::map<std::size_t, std::pair<double, std::size_t>> per_task;
  for (std::size_t t = 0; t < acc.size(); ++t)
    for (std::size_t i = 0; i < t; ++i) {
      const double f = acc.at(t).at(i) - acc.at(i).at(i);
      r.entries.push_back({t + 1, i + 1, f});
      auto& [sum, n] = per_task[i + 1];
      sum += f;
      ++n;
    }
  double total = 0.0;
  for (const auto& [task, sn] : per_task) r.per_task_mean.emplace_back(task, sn.first / static_cast<double>(sn.second));
  for (const auto& e : r.entries) total += e.forgetting;
  r.mean = r.entries.empty() ? 0.0 : total / static_cast<double>(r.entries.size());
  return r;
}

inline std::string forgetting_csv(const ForgettingReport& r) {
  std::ostringstream os;
  os << "after_task,eval_task,forgetting\n";
  for (const auto& e : r.entries) os << e.after_task << ',' << e.eval_task << ',' << detail::exact(e.forgetting) << '\n';
  for (const auto& [task, m] : r.per_task_mean) os << "mean," << task << ',' << detail::exact(m) << '\n';
  if (!r.entries.empty()) os << "mean,all," << detail::exact(r.mean) << '\n';
  return os.str();
}

struct GateFractions {
  double only_a = 0.0;
  double overlap = 0.0;
  double only_b = 0.0;
  double unused = 0.0;

  double sum() const { return only_a + overlap + only_b + unused; }
};

struct GateStats {
  TaskId task_a = 0;
  TaskId task_b = 0;
  std::vector<GateFractions> layers;
  GateFractions aggregate;
};

inline GateStats gate_stats(const MemoryBank& bank, TaskId a, TaskId b) {
  const auto& ga = bank.record(a).gates;
  const auto& gb = bank.record(b).gates;
  if (ga.size() != gb.size()) fail(ErrorKind::Fingerprint, "gate_stats: tasks have different layer counts");
  GateStats s{a, b, {}, {}};
  std::array<std::size_t, 4> total{};
  std::size_t channels = 0;
  for (std::size_t l = 0; l < ga.size(); ++l) {
    if (ga[l].size() != gb[l].size()) fail(ErrorKind::Fingerprint, "gate_stats: layer widths differ");
    std::array<std::size_t, 4> n{};
    for (std::size_t c = 0; c < ga[l].size(); ++c) {
      const bool x = ga[l][c], y = gb[l][c];
      ++n[x && !y ? 0 : x && y ? 1 : !x && y ? 2 : 3];
    }
    const double w = static_cast<double>(ga[l].size());
    s.layers.push_back({n[0] / w, n[1] / w, n[2] / w, n[3] / w});
    for (std::size_t k = 0; k < 4; ++k) total[k] += n[k];
    channels += ga[l].size();
  }
  const double w = static_cast<double>(channels);
  s.aggregate = {total[0] / w, total[1] / w, total[2] / w, total[3] / w};
  return s;
}

inline std::string gate_stats_text(const GateStats& s) {
  std::ostringstream os;
  os << "gate occupancy: a = task " << s.task_a << ", b = task " << s.task_b << '\n';
  os << "layer      only a    overlap     only b   not used\n";
  auto row = [&](const std::string& name, const GateFractions& f) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%-8s %7.1f%% %9.1f%% %9.1f%% %9.1f%%\n", name.c_str(), 100.0 * f.only_a,
                  100.0 * f.overlap, 100.0 * f.only_b, 100.0 * f.unused);
    os << buf;
  };
  for (std::size_t l = 0; l < s.layers.size(); ++l) row(std::to_string(l), s.layers[l]);
  row("all", s.aggregate);
  return os.str();
}

struct CorrelationDump {
  CorrelationMatrix matrix;
  std::vector<ClassId> row_classes;
  std::vector<ClassId> col_classes;
  double r_ba = 0.0;
  double r_aa = 0.0;
  double phi = 0.0;
};

inline std::size_t commit_index(const MemoryBank& bank, TaskId id) {
  const auto& recs = bank.records();
  for (std::size_t i = 0; i < recs.size(); ++i)
    if (recs[i].task_id == id) return i;
  fail(ErrorKind::NotFound, "task " + std::to_string(id) + " not in memory bank");
}

// Rows are the classes of a (stored prototypes), columns the classes of b as
// seen through a's sub-network. a must be committed no later than b.
inline CorrelationDump correlation_dump(const MemoryBank& bank, TaskId a, TaskId b) {
  const auto ia = commit_index(bank, a), ib = commit_index(bank, b);
  if (ia > ib) fail(ErrorKind::InvalidArgument, "correlation_dump: task a must be committed before or equal to task b");
  const auto& ra = bank.record(a);
  const auto& rb = bank.record(b);
  CorrelationDump d;
  d.row_classes = ra.class_ids;
  d.col_classes = rb.class_ids;
  d.r_aa = ra.baseline;
  if (a == b) {
    d.matrix = class_to_class(ra.prototypes, ra.prototypes, a, a);
    d.r_ba = ra.baseline;
  } else {
    const CrossTaskCorrelation* c = nullptr;
    for (const auto& x : rb.correlations)
      if (x.source_task == a) c = &x;
    if (!c) fail(ErrorKind::NotFound, "task " + std::to_string(b) + " holds no correlation against task " + std::to_string(a));
    d.matrix = class_to_class(ra.prototypes, c->prototypes, a, b);
    d.r_ba = c->r_cross;
  }
  d.phi = gdc_weight(d.r_ba, d.r_aa);
  return d;
}

inline std::string correlation_text(const CorrelationDump& d) {
  std::ostringstream os;
  os << "prototype correlation (MSE): rows = task " << d.matrix.source_task << ", columns = task "
     << d.matrix.target_task << '\n';
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-8s", "class");
  os << buf;
  for (auto c : d.col_classes) {
    std::snprintf(buf, sizeof buf, " %12s", ("c" + std::to_string(c)).c_str());
    os << buf;
  }
  os << '\n';
  for (std::size_t i = 0; i < d.matrix.rows(); ++i) {
    std::snprintf(buf, sizeof buf, "%-8s", ("c" + std::to_string(d.row_classes[i])).c_str());
    os << buf;
    for (std::size_t j = 0; j < d.matrix.cols(); ++j) {
      std::snprintf(buf, sizeof buf, " %12.6g", d.matrix.at(i, j));
      os << buf;
    }
    os << '\n';
  }
  os << "R(b,a) = " << detail::fmt("%.9g", d.r_ba) << '\n';
  os << "R(a,a) = " << detail::fmt("%.9g", d.r_aa) << '\n';
  os << "phi = " << detail::fmt("%.9g", d.phi) << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Sequential run.

struct ExperimentResult {
  AccuracyMatrix accuracy;
  MemoryBank bank;
  GatedNetwork net;
  std::vector<TaskData> tasks;
};

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorKind::Io, "write to " + path.string() + " failed");
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Trains every task in order and evaluates all completed tasks after each.
// With a non-empty out_dir, writes bank.bin (gated runs), metrics.csv,
// forgetting.csv, gate_stats.txt, correlation.txt and task_<id>_val.csv.
inline ExperimentResult run_sequence(const ExperimentConfig& cfg, const std::filesystem::path& out_dir = {}) {
  ExperimentResult res;
  res.tasks = generate_tasks(cfg.tasks);
  const bool write = !out_dir.empty();
  if (write) std::filesystem::create_directories(out_dir);

  if (cfg.method == Method::Rosetta) {
    res.net = GatedNetwork::init(cfg.arch, cfg.train.seed);
    if (write) {
      const auto path = out_dir / "bank.bin";
      res.bank = MemoryBank(cfg.arch.fingerprint(), path);
      res.bank.save(path);
    } else {
      res.bank = MemoryBank(cfg.arch.fingerprint());
    }
    for (std::size_t t = 0; t < res.tasks.size(); ++t) {
      train_task(res.net, res.bank, res.tasks[t], cfg.train);
      std::vector<double> row;
      for (std::size_t i = 0; i <= t; ++i) {
        const auto& task = res.tasks[i];
        row.push_back(accuracy(infer(res.net, res.bank, task.task_id, task.val.inputs), task.val.labels));
      }
      res.accuracy.push_back(std::move(row));
    }
  } else {
    FinetuneBaseline baseline(cfg.arch, cfg.train);
    for (std::size_t t = 0; t < res.tasks.size(); ++t) {
      baseline.train(res.tasks[t]);
      std::vector<double> row;
      for (std::size_t i = 0; i <= t; ++i) {
        const auto& task = res.tasks[i];
        row.push_back(accuracy(baseline.logits(task.task_id, task.val.inputs), task.val.labels));
      }
      res.accuracy.push_back(std::move(row));
    }
  }

  if (write) {
    write_file(out_dir / "metrics.csv", metrics_csv(res.accuracy));
    write_file(out_dir / "forgetting.csv", forgetting_csv(forgetting_report(res.accuracy)));
    for (const auto& task : res.tasks)
      write_file(out_dir / ("task_" + std::to_string(task.task_id) + "_val.csv"), dataset_csv(task.val));
    if (cfg.method == Method::Rosetta) {
      std::string stats, corr;
      for (std::size_t t = 1; t < res.tasks.size(); ++t) {
        const auto a = res.tasks[t - 1].task_id, b = res.tasks[t].task_id;
        stats += gate_stats_text(gate_stats(res.bank, a, b)) + '\n';
        corr += correlation_text(correlation_dump(res.bank, a, b)) + '\n';
      }
      write_file(out_dir / "gate_stats.txt", stats);
      write_file(out_dir / "correlation.txt", corr);
    }
  }
  return res;
}

}  // namespace rosetta
