#pragma once

#include <string>
#include <vector>

namespace enercast::csv {

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    /// Column index by (trimmed, case-sensitive) name, -1 if absent.
    int find(const std::string& name) const;
};

/// Reads a comma-separated file with a mandatory header row. Handles quoted
/// fields with doubled quotes; no embedded newlines.
Table read_file(const std::string& path);

std::vector<std::string> split_line(const std::string& line);

std::string trim(const std::string& s);

/// Shortest decimal form that round-trips to the same double.
std::string format_double(double v);

}  // namespace enercast::csv
