#include "regionembed/csv.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include "regionembed/common.hpp"

namespace regionembed {

namespace {

std::string trim(const std::string& s) {
    size_t b = 0;
    size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

}  // namespace

CsvTable read_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ValidationError("cannot open file: " + path);
    }
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    CsvTable table;
    std::vector<std::string> record;
    std::string field;
    bool quoted = false;
    bool was_quoted = false;
    int line_no = 1;
    int record_line = 1;

    auto push_field = [&]() {
        record.push_back(was_quoted ? field : trim(field));
        field.clear();
        was_quoted = false;
    };
    auto push_record = [&]() {
        push_field();
        // Skip blank lines.
        if (!(record.size() == 1 && record[0].empty())) {
            if (table.header.empty()) {
                table.header = record;
            } else {
                if (record.size() != table.header.size()) {
                    throw ValidationError(path + ":" + std::to_string(record_line) + ": expected " +
                                          std::to_string(table.header.size()) + " fields, got " +
                                          std::to_string(record.size()));
                }
                table.rows.push_back(record);
                table.line.push_back(record_line);
            }
        }
        record.clear();
        record_line = line_no;
    };

    for (size_t i = 0; i < content.size(); ++i) {
        const char c = content[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < content.size() && content[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                if (c == '\n') ++line_no;
                field += c;
            }
        } else if (c == '"' && trim(field).empty()) {
            quoted = true;
            was_quoted = true;
        } else if (c == ',') {
            push_field();
        } else if (c == '\n') {
            ++line_no;
            push_record();
        } else if (c != '\r') {
            field += c;
        }
    }
    if (quoted) {
        throw ValidationError(path + ": unterminated quoted field");
    }
    if (!field.empty() || !record.empty()) {
        push_record();
    }
    if (table.header.empty()) {
        throw ValidationError(path + ": missing header row");
    }
    return table;
}

int csv_column(const CsvTable& table, const std::string& name) {
    auto lower = [](std::string s) {
        for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        return s;
    };
    const std::string want = lower(name);
    for (size_t i = 0; i < table.header.size(); ++i) {
        if (lower(table.header[i]) == want) return static_cast<int>(i);
    }
    return -1;
}

std::string csv_quote(const std::string& field) {
    if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += '"';
    return out;
}

std::string format_double(double x) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
    (void)ec;
    return std::string(buf, ptr);
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw ValidationError("cannot write file: " + path);
    }
    out << content;
    if (!out) {
        throw ValidationError("write failed: " + path);
    }
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ValidationError("cannot open file: " + path);
    }
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace regionembed
