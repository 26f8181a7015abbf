#include "zsil/experiment.hpp"

#include "zsil/format.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace zsil {

namespace {

namespace fs = std::filesystem;

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  return out;
}

void write_avg_csv(const std::string& path, const std::vector<int>& classes_seen,
                   const std::vector<double>& avg) {
  std::ofstream out = open_out(path);
  out << "task,classes_seen,average_accuracy\n";
  for (std::size_t k = 0; k < avg.size(); ++k)
    out << (k + 1) << ',' << classes_seen[k] << ',' << format_g17(avg[k]) << '\n';
}

std::vector<int> cumulative_classes(const TaskSequence& stream) {
  std::vector<int> out;
  int n = 0;
  for (const Task& t : stream.tasks) {
    n += static_cast<int>(t.classes.size());
    out.push_back(n);
  }
  return out;
}

}  // namespace

void write_accuracy_matrix_csv(const AccuracyMatrix& m, const std::string& path) {
  std::ofstream out = open_out(path);
  for (int j = 1; j <= m.n_tasks(); ++j) out << (j > 1 ? "," : "") << "task_" << j;
  out << '\n';
  for (const auto& row : m.rows()) {
    for (int j = 0; j < m.n_tasks(); ++j) {
      if (j) out << ',';
      if (j < static_cast<int>(row.size())) out << format_g17(row[static_cast<std::size_t>(j)]);
    }
    out << '\n';
  }
}

void write_series_svg(const std::string& path, const std::vector<std::string>& names,
                      const std::vector<std::vector<int>>& xs,
                      const std::vector<std::vector<double>>& ys) {
  if (names.size() != xs.size() || xs.size() != ys.size())
    throw std::invalid_argument("svg: mismatched series");
  const int width = 640, height = 420;
  const int ml = 70, mr = 30, mt = 30, mb = 60;
  int x_max = 1;
  for (const auto& s : xs)
    for (int v : s) x_max = std::max(x_max, v);

  auto px = [&](double x) { return ml + (width - ml - mr) * (x / x_max); };
  auto py = [&](double y) { return height - mb - (height - mt - mb) * (y / 100.0); };
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                  "#ff7f0e", "#8c564b", "#e377c2"};

  std::ofstream out = open_out(path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  // axes
  out << "<line x1=\"" << ml << "\" y1=\"" << (height - mb) << "\" x2=\"" << (width - mr)
      << "\" y2=\"" << (height - mb) << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\""
      << (height - mb) << "\" stroke=\"black\"/>\n";
  for (int y = 0; y <= 100; y += 20) {
    out << "<text x=\"" << (ml - 8) << "\" y=\"" << format_fixed(py(y) + 4, 1)
        << "\" text-anchor=\"end\">" << y << "</text>\n";
    out << "<line x1=\"" << ml << "\" y1=\"" << format_fixed(py(y), 1) << "\" x2=\""
        << (width - mr) << "\" y2=\"" << format_fixed(py(y), 1)
        << "\" stroke=\"#dddddd\"/>\n";
  }
  for (int x = 0; x <= x_max; ++x)
    out << "<text x=\"" << format_fixed(px(x), 1) << "\" y=\"" << (height - mb + 18)
        << "\" text-anchor=\"middle\">" << x << "</text>\n";
  out << "<text x=\"" << (ml + (width - ml - mr) / 2) << "\" y=\"" << (height - 14)
      << "\" text-anchor=\"middle\">classes seen</text>\n";
  out << "<text transform=\"translate(16," << (mt + (height - mt - mb) / 2)
      << ") rotate(-90)\" text-anchor=\"middle\">average accuracy (%)</text>\n";

  for (std::size_t s = 0; s < names.size(); ++s) {
    const char* color = kColors[s % 7];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < xs[s].size(); ++i) {
      if (i) out << ' ';
      out << format_fixed(px(xs[s][i]), 2) << ',' << format_fixed(py(ys[s][i]), 2);
    }
    out << "\"/>\n";
    out << "<text x=\"" << (width - mr - 4) << "\" y=\"" << (mt + 16 * static_cast<int>(s) + 4)
        << "\" text-anchor=\"end\" fill=\"" << color << "\">" << names[s] << "</text>\n";
  }
  out << "</svg>\n";
}

RunReport run_experiment(const ExperimentConfig& cfg, const std::string& out_root) {
  const TaskSequence stream = cfg.build_stream();
  const LearnerConfig lc = cfg.learner_config(stream);

  const fs::path run_dir = fs::path(out_root) / cfg.run_id();
  fs::create_directories(run_dir / "checkpoints");
  fs::create_directories(run_dir / "plots");

  {
    std::ofstream out = open_out((run_dir / "config.resolved").string());
    out << cfg.to_kv().resolved();
  }

  // Naive fine-tuning is the same loop with no transfer set and no
  // distillation; everything else follows the configured values.
  TrainConfig tc = cfg.train;
  RecoveryConfig rc = cfg.recovery;
  if (cfg.method == Method::kNaive) {
    tc.lambda = 0.0;
    rc.transfer_size = 0;
  }

  SequenceResult result;
  std::ofstream manifest;
  if (cfg.method == Method::kZsil || cfg.method == Method::kFsil) {
    manifest = open_out((run_dir / "transfer_manifest.csv").string());
    manifest << "task,sample,class_id,head,final_loss,iterations,target\n";
  }

  if (cfg.method == Method::kJoint) {
    result = run_joint(stream, lc, tc, cfg.setting);
    save_checkpoint(result.learner, (run_dir / "checkpoints" / "task_1.ckpt").string());
  } else {
    SequenceHooks hooks;
    if (manifest.is_open())
      hooks.on_transfer_set = [&](int task, const Learner&, const TransferSet& set) {
        for (std::size_t i = 0; i < set.samples.size(); ++i) {
          const TransferSample& s = set.samples[i];
          manifest << task + 1 << ',' << i << ',' << s.label << ',' << s.head << ','
                   << format_g17(s.final_loss) << ',' << s.iterations << ',';
          for (Eigen::Index j = 0; j < s.target.size(); ++j) {
            if (j) manifest << ';';
            manifest << format_g17(s.target[j]);
          }
          manifest << '\n';
        }
      };
    hooks.on_task_done = [&](int task, const Learner& l, const ConfusionMatrix& cm) {
      save_checkpoint(l,
                      (run_dir / "checkpoints" / ("task_" + std::to_string(task + 1) + ".ckpt"))
                          .string(),
                      &cm);
    };
    result = run_sequence(stream, lc, tc, rc, cfg.setting,
                          cfg.method == Method::kFsil ? cfg.memory_capacity : 0, &hooks);
  }

  RunReport report;
  report.run_dir = run_dir.string();
  report.accuracy = result.accuracy;
  report.classes_seen = cumulative_classes(stream);
  if (cfg.method == Method::kJoint) {
    report.classes_seen = {stream.total_classes};
    report.avg_series = {average_accuracy(result.accuracy, 1)};
  } else {
    for (int k = 1; k <= result.accuracy.completed(); ++k)
      report.avg_series.push_back(average_accuracy(result.accuracy, k));
  }

  write_accuracy_matrix_csv(result.accuracy, (run_dir / "accuracy_matrix.csv").string());
  write_avg_csv((run_dir / "avg_accuracy.csv").string(), report.classes_seen, report.avg_series);
  write_avg_csv((run_dir / "plots" / "avg_accuracy_series.csv").string(), report.classes_seen,
                report.avg_series);
  write_series_svg((run_dir / "plots" / "avg_accuracy.svg").string(), {cfg.run_id()},
                   {report.classes_seen}, {report.avg_series});
  return report;
}

SweepParam sweep_param_from_name(const std::string& name) {
  if (name == "transfer_size") return SweepParam::kTransferSize;
  if (name == "lambda") return SweepParam::kLambda;
  if (name == "eta") return SweepParam::kEta;
  throw std::invalid_argument("sweep parameter must be transfer_size, lambda or eta, got '" +
                              name + "'");
}

std::string sweep_param_name(SweepParam p) {
  switch (p) {
    case SweepParam::kTransferSize: return "transfer_size";
    case SweepParam::kLambda: return "lambda";
    case SweepParam::kEta: return "eta";
  }
  return "?";
}

namespace {

std::string value_label(SweepParam param, double v) {
  if (param == SweepParam::kTransferSize) return std::to_string(static_cast<long>(v));
  std::string s = format_g17(v);
  for (char& c : s)
    if (c == '.') c = 'p';
  return s;
}

}  // namespace

std::vector<RunReport> run_sweep(const ExperimentConfig& cfg, SweepParam param,
                                 const std::vector<double>& values, const std::string& out_root) {
  if (values.empty()) throw std::invalid_argument("run_sweep: empty value list");
  std::vector<RunReport> reports;
  std::vector<std::string> names;
  for (double v : values) {
    ExperimentConfig c = cfg;
    switch (param) {
      case SweepParam::kTransferSize: c.recovery.transfer_size = static_cast<long>(v); break;
      case SweepParam::kLambda:
        c.train.lambda = v;
        c.train.lambda1 = v;
        break;
      case SweepParam::kEta: c.recovery.eta = v; break;
    }
    const std::string label = sweep_param_name(param) + "_" + value_label(param, v);
    names.push_back(label);
    reports.push_back(run_experiment(c, (fs::path(out_root) / label).string()));
  }

  // Combined wide CSV: one series column per swept value.
  const fs::path combined = fs::path(out_root) / ("sweep_" + sweep_param_name(param) + ".csv");
  fs::create_directories(out_root);
  std::ofstream out = open_out(combined.string());
  out << "task,classes_seen";
  for (const std::string& n : names) out << ',' << n;
  out << '\n';
  const std::size_t n_rows = reports.front().avg_series.size();
  for (std::size_t k = 0; k < n_rows; ++k) {
    out << (k + 1) << ',' << reports.front().classes_seen[k];
    for (const RunReport& r : reports)
      out << ',' << (k < r.avg_series.size() ? format_g17(r.avg_series[k]) : "");
    out << '\n';
  }

  std::vector<std::vector<int>> xs;
  std::vector<std::vector<double>> ys;
  for (const RunReport& r : reports) {
    xs.push_back(r.classes_seen);
    ys.push_back(r.avg_series);
  }
  write_series_svg((fs::path(out_root) / ("sweep_" + sweep_param_name(param) + ".svg")).string(),
                   names, xs, ys);
  return reports;
}

}  // namespace zsil
