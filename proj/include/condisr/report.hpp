#pragma once

#include <string>

#include "condisr/engine.hpp"

// Results rendering: CSV and JSON for machines, a markdown table mirroring
// the per-center mean +/- std layout for humans. CSV/JSON outputs carry no
// timestamps so reruns are byte-identical.

namespace condisr {

void write_results_csv(const std::string& path, const ResultsTable& table);
void write_results_json(const std::string& path, const ResultsTable& table,
                        const std::vector<RunRecord>& records);
void write_runs_csv(const std::string& path, const std::vector<RunRecord>& records);

/// Accuracy in percent, one decimal, "mean ± std" per cell.
std::string results_markdown(const ResultsTable& table);

}  // namespace condisr
