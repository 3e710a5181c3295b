#pragma once

#include <string>
#include <vector>

namespace regionembed {

// Parsed CSV file. Header row is required; `line` holds the 1-based source
// line of each data row so loaders can name it in error messages.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<int> line;
};

// Reads a UTF-8 CSV file with a header row. Handles double-quoted fields
// (embedded commas, quotes, newlines). Fields are trimmed of surrounding
// whitespace unless quoted. Throws ValidationError on I/O or syntax errors.
CsvTable read_csv(const std::string& path);

// Index of a header column, or -1 if absent. Comparison is case-insensitive.
int csv_column(const CsvTable& table, const std::string& name);

// Quotes a field for CSV output if it contains a comma, quote or newline.
std::string csv_quote(const std::string& field);

// Shortest decimal representation that round-trips a double exactly.
std::string format_double(double x);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace regionembed
