#include "condisr/report.hpp"

#include <cstdio>
#include <fstream>

#include <json.hpp>

namespace condisr {
namespace {

std::string fmt(double v, const char* spec = "%.6f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

}  // namespace

void write_results_csv(const std::string& path, const ResultsTable& table) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path);
  os << "row";
  for (int c = 0; c < 5; ++c) os << ",C" << c << "_mean,C" << c << "_std";
  os << ",average\n";
  for (std::size_t r = 0; r < table.row_labels.size(); ++r) {
    os << table.row_labels[r];
    for (int c = 0; c < 5; ++c) {
      const CellStat& cell = table.cells[r][static_cast<std::size_t>(c)];
      if (cell.missing())
        os << ",,";
      else
        os << "," << fmt(cell.mean()) << "," << fmt(cell.stddev());
    }
    os << "," << fmt(table.average(r)) << "\n";
  }
}

void write_runs_csv(const std::string& path, const std::vector<RunRecord>& records) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path);
  os << "method,source,seed,status,selected_epoch,best_val_acc,target_acc\n";
  for (const auto& r : records) {
    double best_val =
        r.selected_epoch >= 0 ? r.epochs[static_cast<std::size_t>(r.selected_epoch)].val_acc : 0.0;
    os << r.method << "," << r.source << "," << r.seed << "," << (r.failed ? "failed" : "ok")
       << "," << r.selected_epoch << "," << fmt(best_val) << "," << fmt(r.target_acc) << "\n";
  }
}

void write_results_json(const std::string& path, const ResultsTable& table,
                        const std::vector<RunRecord>& records) {
  nlohmann::json j;
  j["rows"] = nlohmann::json::array();
  for (std::size_t r = 0; r < table.row_labels.size(); ++r) {
    nlohmann::json row;
    row["label"] = table.row_labels[r];
    row["cells"] = nlohmann::json::array();
    for (int c = 0; c < 5; ++c) {
      const CellStat& cell = table.cells[r][static_cast<std::size_t>(c)];
      nlohmann::json jc;
      jc["center"] = c;
      jc["missing"] = cell.missing();
      jc["accs"] = cell.accs;
      if (!cell.missing()) {
        jc["mean"] = cell.mean();
        jc["std"] = cell.stddev();
      }
      row["cells"].push_back(jc);
    }
    row["average"] = table.average(r);
    j["rows"].push_back(row);
  }
  j["runs"] = nlohmann::json::array();
  for (const auto& r : records) {
    nlohmann::json jr;
    jr["method"] = r.method;
    jr["source"] = r.source;
    jr["seed"] = r.seed;
    jr["failed"] = r.failed;
    if (r.failed) jr["error"] = r.error;
    jr["selected_epoch"] = r.selected_epoch;
    jr["target_acc"] = r.target_acc;
    nlohmann::json hist = nlohmann::json::array();
    for (const auto& e : r.epochs)
      hist.push_back({{"cls", e.cls},
                      {"c_str", e.c_str},
                      {"c_sty", e.c_sty},
                      {"rec", e.rec},
                      {"total", e.total},
                      {"val_acc", e.val_acc}});
    jr["epochs"] = hist;
    nlohmann::json pd;
    for (const auto& [d, a] : r.per_domain) pd["C" + std::to_string(d)] = a;
    jr["per_domain"] = pd;
    j["runs"].push_back(jr);
  }
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path);
  os << j.dump(2) << "\n";
}

std::string results_markdown(const ResultsTable& table) {
  std::string md = "| Method | C0 | C1 | C2 | C3 | C4 | Average |\n";
  md += "|---|---|---|---|---|---|---|\n";
  for (std::size_t r = 0; r < table.row_labels.size(); ++r) {
    md += "| " + table.row_labels[r] + " ";
    for (int c = 0; c < 5; ++c) {
      const CellStat& cell = table.cells[r][static_cast<std::size_t>(c)];
      if (cell.missing())
        md += "| - ";
      else
        md += "| " + fmt(100.0 * cell.mean(), "%.1f") + " ± " + fmt(100.0 * cell.stddev(), "%.1f") +
              " ";
    }
    md += "| " + fmt(100.0 * table.average(r), "%.1f") + " |\n";
  }
  return md;
}

}  // namespace condisr
