#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace taskpack {

// One row per task lifecycle inside a run. Errors are top-1 percentages.
struct MetricsRow {
    std::string task;
    int position = 0; // 1-based order of addition
    double ratio = 0.0;
    double final_top1_error = 0.0;
    double preprune_error = 0.0;
    double postprune_error = 0.0;
    double postretrain_error = 0.0;
    std::uint64_t owned_params = 0;
    std::uint64_t free_params = 0;
    std::uint64_t overhead_bytes = 0;
    std::uint64_t extra_bias_bytes = 0;
    bool zero_forgetting_ok = true;
    std::uint64_t run_seed = 0;
    std::string run_ordering; // e.g. "0-2-1"
    double wall_time_s = 0.0; // volatile; excluded from reports unless asked
};

// Deterministic float formatting used across all reports: 9 significant
// digits, shortest form.
std::string format_float(double v);

// include_timing appends the wall_time_s column; it is off by default so
// identical runs produce byte-identical files.
std::string render_report(const std::vector<MetricsRow>& rows, const std::string& format,
                          bool include_timing = false);
void emit_report(const std::vector<MetricsRow>& rows, const std::string& format,
                 const std::string& path, bool include_timing = false);

// CSV reader for the exact dialect render_report writes.
std::vector<MetricsRow> parse_csv_report(const std::string& text);

} // namespace taskpack
