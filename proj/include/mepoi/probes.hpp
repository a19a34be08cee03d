#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mepoi/init.hpp"
#include "mepoi/metrics.hpp"
#include "mepoi/optim.hpp"
#include "mepoi/rng.hpp"
#include "mepoi/tape.hpp"
#include "mepoi/world.hpp"

namespace mepoi {

// Downstream evaluation: small task heads trained on frozen embeddings. The
// embeddings enter the graph as constants, so nothing can write back to them.

enum class ProbeMode { combined, mobility_only, text_only };
const char* probe_mode_name(ProbeMode mode);

enum class TaskKind { open_hours, closure, intent, busyness, price };

struct TaskSpec {
  TaskKind kind = TaskKind::open_hours;
  std::string name;
  i64 output_dim = 0;
  int num_classes = 0;  // 0 for dense-target tasks
  std::string primary_metric;
  std::string secondary_metric;
};
TaskSpec task_spec(TaskKind kind);
std::vector<TaskSpec> all_tasks();

// Per-POI targets for one task: either a dense [P x output_dim] matrix
// (open hours, closure, busyness) or a class id per POI (intent, price).
struct TaskLabels {
  Tensor<double> dense;
  std::vector<int> classes;
};
TaskLabels make_labels(const World& world, TaskKind kind);

// Train/validation/test row indices, 60/20/20. When strata are given the
// ratios hold within every stratum and each class lands in train.
struct Split {
  std::vector<i64> train, val, test;
};
Split stratified_split(i64 count, const std::vector<int>& strata, const Rng& rng);

// Two single-hidden-layer branches (mobility and text) whose activations are
// concatenated, mobility block first, then mapped to the task output.
// Inactive branches are replaced by zero blocks of the same width.
template <typename T>
class ProbeHead {
 public:
  ProbeHead(ParamStore<T>& store, i64 mobility_dim, i64 text_dim, i64 hidden, i64 out_dim,
            const Rng& init_rng)
      : mobility_dim_(mobility_dim), text_dim_(text_dim), hidden_(hidden), out_dim_(out_dim) {
    check(mobility_dim_ >= 1 && text_dim_ >= 1 && hidden_ >= 1 && out_dim_ >= 1,
          "probe head: dims must be positive");
    Rng r = init_rng.child("probe_head");
    pw_ = &store.add("probe.p_w", xavier_uniform<T>(hidden_, mobility_dim_, r));
    pb_ = &store.add("probe.p_b", Tensor<T>::zeros({hidden_}));
    tw_ = &store.add("probe.t_w", xavier_uniform<T>(hidden_, text_dim_, r));
    tb_ = &store.add("probe.t_b", Tensor<T>::zeros({hidden_}));
    ow_ = &store.add("probe.o_w", xavier_uniform<T>(out_dim_, 2 * hidden_, r));
    ob_ = &store.add("probe.o_b", Tensor<T>::zeros({out_dim_}));
  }

  i64 out_dim() const { return out_dim_; }

  Value<T> forward(Tape<T>& tape, const Tensor<T>& z_me, const Tensor<T>& z_text, ProbeMode mode) {
    check(z_me.rank() == 2 && z_me.cols() == mobility_dim_, "probe head: mobility rows must be [n x mobility dim]");
    check(z_text.rank() == 2 && z_text.cols() == text_dim_, "probe head: text rows must be [n x text dim]");
    check(z_me.rows() == z_text.rows(), "probe head: one text row per mobility row required");
    const i64 n = z_me.rows();
    Value<T> mob, txt;
    if (mode == ProbeMode::text_only) {
      mob = tape.constant(Tensor<T>::zeros({n, hidden_}));
    } else {
      mob = ops::relu(ops::add_rowvec(ops::matmul_nt(tape.constant(z_me), tape.leaf(*pw_)), tape.leaf(*pb_)));
    }
    if (mode == ProbeMode::mobility_only) {
      txt = tape.constant(Tensor<T>::zeros({n, hidden_}));
    } else {
      txt = ops::relu(ops::add_rowvec(ops::matmul_nt(tape.constant(z_text), tape.leaf(*tw_)), tape.leaf(*tb_)));
    }
    Value<T> cat = ops::concat_cols(std::vector<Value<T>>{mob, txt});
    return ops::add_rowvec(ops::matmul_nt(cat, tape.leaf(*ow_)), tape.leaf(*ob_));
  }

 private:
  i64 mobility_dim_, text_dim_, hidden_, out_dim_;
  Param<T>* pw_ = nullptr;
  Param<T>* pb_ = nullptr;
  Param<T>* tw_ = nullptr;
  Param<T>* tb_ = nullptr;
  Param<T>* ow_ = nullptr;
  Param<T>* ob_ = nullptr;
};

struct ProbeConfig {
  i64 hidden = 256;
  int epochs = 100;
  int patience = 10;
  double lr = 1e-3;
  double weight_decay = 0.01;
};

struct ProbeResult {
  std::string task;
  std::string mode;
  std::uint64_t seed = 0;
  double primary = 0.0;
  double secondary = 0.0;
  bool primary_defined = false;
  bool secondary_defined = false;
  double val_primary = 0.0;
  int best_epoch = 0;
  int trained_epochs = 0;
};

// Test-set metric pair for one task given raw head outputs.
std::pair<std::optional<double>, std::optional<double>> probe_metrics(const TaskSpec& spec,
                                                                      const Tensor<double>& logits,
                                                                      const TaskLabels& labels,
                                                                      const std::vector<i64>& rows);

// Trains one head on the train rows, early-stops on the validation primary
// metric, and reports test metrics from the best epoch's parameters.
ProbeResult finetune_probe(const TaskSpec& spec, const Tensor<double>& z_me, const Tensor<double>& z_text,
                           const TaskLabels& labels, const Split& split, ProbeMode mode,
                           const ProbeConfig& cfg, std::uint64_t seed);

// Report emission: raw per-run JSON, a per-(task, mode) mean table, and a
// small bar-chart SVG of primary metrics.
void write_probe_report_json(const std::string& path, const std::vector<ProbeResult>& results);
void write_probe_report_markdown(const std::string& path, const std::vector<ProbeResult>& results);
void write_probe_report_svg(const std::string& path, const std::vector<ProbeResult>& results);

}  // namespace mepoi
