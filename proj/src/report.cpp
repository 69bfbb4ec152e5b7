#include "taskpack/report.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "taskpack/error.hpp"

namespace taskpack {

namespace {

const char* kColumns[] = {
    "task",          "position",        "ratio",
    "final_top1_error", "preprune_error", "postprune_error",
    "postretrain_error", "owned_params",  "free_params",
    "overhead_bytes", "extra_bias_bytes", "zero_forgetting_ok",
    "run_seed",      "run_ordering",
};
constexpr std::size_t kColumnCount = sizeof(kColumns) / sizeof(kColumns[0]);

std::string csv_quote(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

std::string json_quote(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        switch (c) {
            case '"': out += "\\\""; break;
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            case '\t': out += "\\t"; break;
            default: out += c;
        }
    }
    out += '"';
    return out;
}

std::vector<std::string> row_fields(const MetricsRow& r, bool include_timing) {
    std::vector<std::string> f = {
        r.task,
        std::to_string(r.position),
        format_float(r.ratio),
        format_float(r.final_top1_error),
        format_float(r.preprune_error),
        format_float(r.postprune_error),
        format_float(r.postretrain_error),
        std::to_string(r.owned_params),
        std::to_string(r.free_params),
        std::to_string(r.overhead_bytes),
        std::to_string(r.extra_bias_bytes),
        r.zero_forgetting_ok ? "true" : "false",
        std::to_string(r.run_seed),
        r.run_ordering,
    };
    if (include_timing) f.push_back(format_float(r.wall_time_s));
    return f;
}

// Splits one CSV record honoring double-quote escaping.
std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    fields.push_back(cur);
    return fields;
}

} // namespace

std::string format_float(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

std::string render_report(const std::vector<MetricsRow>& rows, const std::string& format,
                          bool include_timing) {
    require(format == "csv" || format == "json", ErrorCode::input,
            "render_report: format must be csv or json, got '" + format + "'");
    std::ostringstream os;
    if (format == "csv") {
        for (std::size_t c = 0; c < kColumnCount; ++c) {
            if (c) os << ',';
            os << kColumns[c];
        }
        if (include_timing) os << ",wall_time_s";
        os << '\n';
        for (const auto& r : rows) {
            auto fields = row_fields(r, include_timing);
            for (std::size_t c = 0; c < fields.size(); ++c) {
                if (c) os << ',';
                os << csv_quote(fields[c]);
            }
            os << '\n';
        }
        return os.str();
    }

    os << "{\n  \"rows\": [";
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        os << (i ? ",\n    {" : "\n    {");
        os << "\"task\": " << json_quote(r.task);
        os << ", \"position\": " << r.position;
        os << ", \"ratio\": " << format_float(r.ratio);
        os << ", \"final_top1_error\": " << format_float(r.final_top1_error);
        os << ", \"preprune_error\": " << format_float(r.preprune_error);
        os << ", \"postprune_error\": " << format_float(r.postprune_error);
        os << ", \"postretrain_error\": " << format_float(r.postretrain_error);
        os << ", \"owned_params\": " << r.owned_params;
        os << ", \"free_params\": " << r.free_params;
        os << ", \"overhead_bytes\": " << r.overhead_bytes;
        os << ", \"extra_bias_bytes\": " << r.extra_bias_bytes;
        os << ", \"zero_forgetting_ok\": " << (r.zero_forgetting_ok ? "true" : "false");
        os << ", \"run_seed\": " << r.run_seed;
        os << ", \"run_ordering\": " << json_quote(r.run_ordering);
        if (include_timing) os << ", \"wall_time_s\": " << format_float(r.wall_time_s);
        os << "}";
    }
    os << "\n  ]\n}\n";
    return os.str();
}

void emit_report(const std::vector<MetricsRow>& rows, const std::string& format,
                 const std::string& path, bool include_timing) {
    const std::string text = render_report(rows, format, include_timing);
    std::ofstream out(path, std::ios::binary);
    require(out.good(), ErrorCode::io, "emit_report: cannot open '" + path + "' for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    require(out.good(), ErrorCode::io, "emit_report: write to '" + path + "' failed");
}

std::vector<MetricsRow> parse_csv_report(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    require(static_cast<bool>(std::getline(is, line)), ErrorCode::format,
            "parse_csv_report: empty input");
    auto header = split_csv_line(line);
    require(header.size() >= kColumnCount, ErrorCode::format,
            "parse_csv_report: expected at least " + std::to_string(kColumnCount) + " columns");
    for (std::size_t c = 0; c < kColumnCount; ++c)
        require(header[c] == kColumns[c], ErrorCode::format,
                "parse_csv_report: unexpected column '" + header[c] + "'");
    const bool has_timing = header.size() > kColumnCount && header[kColumnCount] == "wall_time_s";

    std::vector<MetricsRow> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto f = split_csv_line(line);
        require(f.size() == kColumnCount + (has_timing ? 1 : 0), ErrorCode::format,
                "parse_csv_report: wrong field count in row " + std::to_string(rows.size() + 1));
        MetricsRow r;
        r.task = f[0];
        r.position = std::stoi(f[1]);
        r.ratio = std::stod(f[2]);
        r.final_top1_error = std::stod(f[3]);
        r.preprune_error = std::stod(f[4]);
        r.postprune_error = std::stod(f[5]);
        r.postretrain_error = std::stod(f[6]);
        r.owned_params = std::stoull(f[7]);
        r.free_params = std::stoull(f[8]);
        r.overhead_bytes = std::stoull(f[9]);
        r.extra_bias_bytes = std::stoull(f[10]);
        r.zero_forgetting_ok = f[11] == "true";
        r.run_seed = std::stoull(f[12]);
        r.run_ordering = f[13];
        if (has_timing) r.wall_time_s = std::stod(f[14]);
        rows.push_back(std::move(r));
    }
    return rows;
}

} // namespace taskpack
