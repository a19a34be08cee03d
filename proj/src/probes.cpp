#include "mepoi/probes.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>

#include <json.hpp>

#include "mepoi/common.hpp"

namespace mepoi {
namespace {

using json = nlohmann::json;

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  check(out.good(), "cannot open for writing: " + path);
  return out;
}

Tensor<double> gather_dense(const Tensor<double>& all, const std::vector<i64>& rows) {
  Tensor<double> out = Tensor<double>::zeros({static_cast<i64>(rows.size()), all.cols()});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    check(rows[i] >= 0 && rows[i] < all.rows(), "probe: row index out of range");
    for (i64 c = 0; c < all.cols(); ++c) out.at(static_cast<i64>(i), c) = all.at(rows[i], c);
  }
  return out;
}

std::vector<int> gather_classes(const std::vector<int>& all, const std::vector<i64>& rows) {
  std::vector<int> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) out[i] = all[static_cast<std::size_t>(rows[i])];
  return out;
}

Tensor<double> sigmoid_all(const Tensor<double>& z) {
  Tensor<double> out = z.clone();
  for (i64 i = 0; i < out.size(); ++i) out.data()[i] = 1.0 / (1.0 + std::exp(-out.data()[i]));
  return out;
}

Tensor<double> softmax_rows_plain(const Tensor<double>& z) {
  Tensor<double> out = z.clone();
  for (i64 r = 0; r < out.rows(); ++r) {
    double mx = out.at(r, 0);
    for (i64 c = 1; c < out.cols(); ++c) mx = std::max(mx, out.at(r, c));
    double sum = 0.0;
    for (i64 c = 0; c < out.cols(); ++c) {
      out.at(r, c) = std::exp(out.at(r, c) - mx);
      sum += out.at(r, c);
    }
    for (i64 c = 0; c < out.cols(); ++c) out.at(r, c) /= sum;
  }
  return out;
}

std::vector<int> argmax_rows(const Tensor<double>& z) {
  std::vector<int> out(static_cast<std::size_t>(z.rows()));
  for (i64 r = 0; r < z.rows(); ++r) {
    int best = 0;
    for (i64 c = 1; c < z.cols(); ++c)
      if (z.at(r, c) > z.at(r, best)) best = static_cast<int>(c);
    out[static_cast<std::size_t>(r)] = best;
  }
  return out;
}

std::vector<double> column(const Tensor<double>& m, i64 c) {
  std::vector<double> out(static_cast<std::size_t>(m.rows()));
  for (i64 r = 0; r < m.rows(); ++r) out[static_cast<std::size_t>(r)] = m.at(r, c);
  return out;
}

// Higher is better for every task except busyness, where the primary metric
// is an error.
double ascending_score(const TaskSpec& spec, double primary) {
  return spec.kind == TaskKind::busyness ? -primary : primary;
}

Value<double> task_loss(Tape<double>& tape, const TaskSpec& spec, ProbeHead<double>& head,
                        const Tensor<double>& z_me, const Tensor<double>& z_text, ProbeMode mode,
                        const TaskLabels& labels, const std::vector<i64>& rows) {
  Value<double> logits = head.forward(tape, gather_dense(z_me, rows), gather_dense(z_text, rows), mode);
  switch (spec.kind) {
    case TaskKind::open_hours:
    case TaskKind::closure:
      return ops::bce_logits(logits, gather_dense(labels.dense, rows));
    case TaskKind::busyness:
      return ops::mse_loss(logits, gather_dense(labels.dense, rows));
    case TaskKind::intent:
    case TaskKind::price: {
      const std::vector<int> cls = gather_classes(labels.classes, rows);
      std::vector<i64> targets(cls.begin(), cls.end());
      return ops::softmax_xent_rows(logits, targets);
    }
  }
  throw std::invalid_argument("task_loss: unknown task kind");
}

}  // namespace

const char* probe_mode_name(ProbeMode mode) {
  switch (mode) {
    case ProbeMode::combined: return "combined";
    case ProbeMode::mobility_only: return "mobility_only";
    case ProbeMode::text_only: return "text_only";
  }
  return "unknown";
}

TaskSpec task_spec(TaskKind kind) {
  switch (kind) {
    case TaskKind::open_hours:
      return {kind, "open_hours", kWeekBins, 0, "macro_f1", "auroc"};
    case TaskKind::closure:
      return {kind, "closure", 1, 0, "f1", "auprc"};
    case TaskKind::intent:
      return {kind, "intent", 4, 4, "macro_f1", "auprc"};
    case TaskKind::busyness:
      return {kind, "busyness", kWeekBins, 0, "mae", "cosine"};
    case TaskKind::price:
      return {kind, "price", 4, 4, "accuracy", "macro_f1"};
  }
  throw std::invalid_argument("task_spec: unknown task kind");
}

std::vector<TaskSpec> all_tasks() {
  return {task_spec(TaskKind::open_hours), task_spec(TaskKind::closure), task_spec(TaskKind::intent),
          task_spec(TaskKind::busyness), task_spec(TaskKind::price)};
}

TaskLabels make_labels(const World& world, TaskKind kind) {
  const i64 n = static_cast<i64>(world.pois.size());
  check(n > 0, "make_labels: empty world");
  TaskLabels out;
  switch (kind) {
    case TaskKind::open_hours:
      out.dense = Tensor<double>::zeros({n, kWeekBins});
      for (i64 r = 0; r < n; ++r)
        for (i64 c = 0; c < kWeekBins; ++c)
          out.dense.at(r, c) = world.pois[static_cast<std::size_t>(r)].truth.open_hours[static_cast<std::size_t>(c)];
      break;
    case TaskKind::closure:
      out.dense = Tensor<double>::zeros({n, 1});
      for (i64 r = 0; r < n; ++r) out.dense.at(r, 0) = world.pois[static_cast<std::size_t>(r)].truth.closed ? 1.0 : 0.0;
      break;
    case TaskKind::busyness:
      out.dense = Tensor<double>::zeros({n, kWeekBins});
      for (i64 r = 0; r < n; ++r) {
        const auto& b = world.pois[static_cast<std::size_t>(r)].truth.busyness;
        check(static_cast<i64>(b.size()) == kWeekBins, "make_labels: busyness must have one value per weekly bin");
        for (i64 c = 0; c < kWeekBins; ++c) out.dense.at(r, c) = b[static_cast<std::size_t>(c)];
      }
      break;
    case TaskKind::intent:
      out.classes.resize(static_cast<std::size_t>(n));
      for (i64 r = 0; r < n; ++r) out.classes[static_cast<std::size_t>(r)] = world.pois[static_cast<std::size_t>(r)].truth.visit_intent;
      break;
    case TaskKind::price:
      out.classes.resize(static_cast<std::size_t>(n));
      for (i64 r = 0; r < n; ++r) out.classes[static_cast<std::size_t>(r)] = world.pois[static_cast<std::size_t>(r)].truth.price_level;
      break;
  }
  return out;
}

Split stratified_split(i64 count, const std::vector<int>& strata, const Rng& rng) {
  check(count > 0, "stratified_split: empty input");
  check(strata.empty() || static_cast<i64>(strata.size()) == count,
        "stratified_split: one stratum per row required");

  std::map<int, std::vector<i64>> groups;
  for (i64 i = 0; i < count; ++i) groups[strata.empty() ? 0 : strata[static_cast<std::size_t>(i)]].push_back(i);

  Split split;
  Rng r = rng.child("split");
  for (auto& [stratum, members] : groups) {
    Rng rs = r.child("stratum", static_cast<i64>(stratum));
    for (std::size_t i = members.size(); i > 1; --i)
      std::swap(members[i - 1], members[static_cast<std::size_t>(rs.uniform_int(0, static_cast<i64>(i) - 1))]);
    const std::size_t n = members.size();
    const std::size_t n_train = std::max<std::size_t>(1, static_cast<std::size_t>(0.6 * static_cast<double>(n)));
    const std::size_t n_val = static_cast<std::size_t>(0.2 * static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i) {
      if (i < n_train)
        split.train.push_back(members[i]);
      else if (i < n_train + n_val)
        split.val.push_back(members[i]);
      else
        split.test.push_back(members[i]);
    }
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.val.begin(), split.val.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

std::pair<std::optional<double>, std::optional<double>> probe_metrics(const TaskSpec& spec,
                                                                      const Tensor<double>& logits,
                                                                      const TaskLabels& labels,
                                                                      const std::vector<i64>& rows) {
  check(logits.rank() == 2 && logits.cols() == spec.output_dim, "probe_metrics: logits shape mismatch");
  check(static_cast<std::size_t>(logits.rows()) == rows.size(), "probe_metrics: one logits row per POI required");
  switch (spec.kind) {
    case TaskKind::open_hours: {
      const Tensor<double> probs = sigmoid_all(logits);
      const Tensor<double> lab = gather_dense(labels.dense, rows);
      return {macro_f1_bins(probs, lab), macro_auroc_bins(probs, lab)};
    }
    case TaskKind::closure: {
      const Tensor<double> probs = sigmoid_all(logits);
      const std::vector<double> score = column(probs, 0);
      const Tensor<double> lab = gather_dense(labels.dense, rows);
      std::vector<int> y(score.size());
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = lab.at(static_cast<i64>(i), 0) > 0.5 ? 1 : 0;
      return {binary_f1(score, y), auprc(score, y)};
    }
    case TaskKind::intent: {
      const Tensor<double> probs = softmax_rows_plain(logits);
      const std::vector<int> lab = gather_classes(labels.classes, rows);
      return {macro_f1_classes(argmax_rows(probs), lab, spec.num_classes), macro_auprc_ovr(probs, lab)};
    }
    case TaskKind::busyness: {
      const Tensor<double> lab = gather_dense(labels.dense, rows);
      return {mae(logits, lab), mean_cosine_rows(logits, lab)};
    }
    case TaskKind::price: {
      const Tensor<double> probs = softmax_rows_plain(logits);
      const std::vector<int> pred = argmax_rows(probs);
      const std::vector<int> lab = gather_classes(labels.classes, rows);
      return {accuracy(pred, lab), macro_f1_classes(pred, lab, spec.num_classes)};
    }
  }
  throw std::invalid_argument("probe_metrics: unknown task kind");
}

ProbeResult finetune_probe(const TaskSpec& spec, const Tensor<double>& z_me, const Tensor<double>& z_text,
                           const TaskLabels& labels, const Split& split, ProbeMode mode,
                           const ProbeConfig& cfg, std::uint64_t seed) {
  check(!split.train.empty(), "finetune_probe: empty train split");
  check(!split.val.empty(), "finetune_probe: empty validation split");
  check(!split.test.empty(), "finetune_probe: empty test split");
  check(z_me.rank() == 2 && z_text.rank() == 2 && z_me.rows() == z_text.rows(),
        "finetune_probe: embedding matrices must pair up");

  Rng rng(seed);
  ParamStore<double> store;
  ProbeHead<double> head(store, z_me.cols(), z_text.cols(), cfg.hidden, spec.output_dim, rng);
  Adam<double> opt(store, AdamConfig{.lr = cfg.lr, .weight_decay = cfg.weight_decay});

  auto eval_logits = [&](const std::vector<i64>& rows) {
    Tape<double> tape;
    Value<double> logits = head.forward(tape, gather_dense(z_me, rows), gather_dense(z_text, rows), mode);
    return tape.val(logits).clone();
  };

  ProbeResult result;
  result.task = spec.name;
  result.mode = probe_mode_name(mode);
  result.seed = seed;

  double best_score = -1e300;
  bool has_best = false;
  std::vector<Tensor<double>> best_params;
  int stall = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Tape<double> tape;
    Value<double> loss = task_loss(tape, spec, head, z_me, z_text, mode, labels, split.train);
    store.zero_grad();
    tape.backward(loss);
    opt.step();
    result.trained_epochs = epoch;

    const auto [val_primary, val_secondary] = probe_metrics(spec, eval_logits(split.val), labels, split.val);
    (void)val_secondary;
    if (val_primary && (!has_best || ascending_score(spec, *val_primary) > best_score)) {
      best_score = ascending_score(spec, *val_primary);
      has_best = true;
      result.val_primary = *val_primary;
      result.best_epoch = epoch;
      best_params.clear();
      for (std::size_t i = 0; i < store.size(); ++i) best_params.push_back(store.at(i).value.clone());
      stall = 0;
    } else {
      ++stall;
      if (stall >= cfg.patience) break;
    }
  }
  if (has_best)
    for (std::size_t i = 0; i < store.size(); ++i) store.at(i).value = best_params[i].clone();

  const auto [primary, secondary] = probe_metrics(spec, eval_logits(split.test), labels, split.test);
  result.primary_defined = primary.has_value();
  result.secondary_defined = secondary.has_value();
  result.primary = primary.value_or(0.0);
  result.secondary = secondary.value_or(0.0);
  return result;
}

void write_probe_report_json(const std::string& path, const std::vector<ProbeResult>& results) {
  json arr = json::array();
  for (const ProbeResult& r : results) {
    json j;
    j["task"] = r.task;
    j["mode"] = r.mode;
    j["seed"] = r.seed;
    j["primary"] = r.primary;
    j["secondary"] = r.secondary;
    j["primary_defined"] = r.primary_defined;
    j["secondary_defined"] = r.secondary_defined;
    j["val_primary"] = r.val_primary;
    j["best_epoch"] = r.best_epoch;
    j["trained_epochs"] = r.trained_epochs;
    arr.push_back(std::move(j));
  }
  std::ofstream out = open_out(path);
  out << arr.dump(2) << "\n";
  check(out.good(), "failed writing " + path);
}

namespace {

struct GroupStats {
  std::string primary_name, secondary_name;
  double primary_sum = 0.0, secondary_sum = 0.0;
  int primary_n = 0, secondary_n = 0, runs = 0;
};

std::map<std::pair<std::string, std::string>, GroupStats> group_results(const std::vector<ProbeResult>& results) {
  std::map<std::pair<std::string, std::string>, GroupStats> groups;
  for (const ProbeResult& r : results) {
    GroupStats& g = groups[{r.task, r.mode}];
    for (const TaskSpec& s : all_tasks()) {
      if (s.name != r.task) continue;
      g.primary_name = s.primary_metric;
      g.secondary_name = s.secondary_metric;
    }
    ++g.runs;
    if (r.primary_defined) {
      g.primary_sum += r.primary;
      ++g.primary_n;
    }
    if (r.secondary_defined) {
      g.secondary_sum += r.secondary;
      ++g.secondary_n;
    }
  }
  return groups;
}

}  // namespace

void write_probe_report_markdown(const std::string& path, const std::vector<ProbeResult>& results) {
  const auto groups = group_results(results);
  std::ofstream out = open_out(path);
  out << "# Probe results\n\n";
  out << "Mean over seeds per task and embedding mode.\n\n";
  out << "| Task | Mode | Runs | Primary | Mean | Secondary | Mean |\n";
  out << "|------|------|------|---------|------|-----------|------|\n";
  char buf[512];
  for (const auto& [key, g] : groups) {
    const double p = g.primary_n > 0 ? g.primary_sum / g.primary_n : 0.0;
    const double s = g.secondary_n > 0 ? g.secondary_sum / g.secondary_n : 0.0;
    std::snprintf(buf, sizeof(buf), "| %s | %s | %d | %s | %.4f | %s | %.4f |\n", key.first.c_str(),
                  key.second.c_str(), g.runs, g.primary_name.c_str(), p, g.secondary_name.c_str(), s);
    out << buf;
  }
  check(out.good(), "failed writing " + path);
}

void write_probe_report_svg(const std::string& path, const std::vector<ProbeResult>& results) {
  const auto groups = group_results(results);
  const int row_h = 22, label_w = 230, bar_w = 360;
  const int height = 30 + row_h * static_cast<int>(groups.size());
  std::ofstream out = open_out(path);
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%d\" height=\"%d\" font-family=\"monospace\" font-size=\"12\">\n",
                label_w + bar_w + 80, height);
  out << buf;
  int y = 20;
  for (const auto& [key, g] : groups) {
    const double p = g.primary_n > 0 ? g.primary_sum / g.primary_n : 0.0;
    const double frac = std::min(1.0, std::max(0.0, p));
    std::snprintf(buf, sizeof(buf), "  <text x=\"4\" y=\"%d\">%s/%s</text>\n", y + 14, key.first.c_str(),
                  key.second.c_str());
    out << buf;
    std::snprintf(buf, sizeof(buf),
                  "  <rect x=\"%d\" y=\"%d\" width=\"%.0f\" height=\"%d\" fill=\"#4878a8\"/>\n", label_w, y + 2,
                  frac * bar_w, row_h - 6);
    out << buf;
    std::snprintf(buf, sizeof(buf), "  <text x=\"%.0f\" y=\"%d\">%.3f</text>\n", label_w + frac * bar_w + 6.0,
                  y + 14, p);
    out << buf;
    y += row_h;
  }
  out << "</svg>\n";
  check(out.good(), "failed writing " + path);
}

}  // namespace mepoi
