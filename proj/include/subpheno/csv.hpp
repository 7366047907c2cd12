#pragma once

// Minimal CSV reader/writer with RFC-4180 quoting, enough for the project's
// fixed schemas. Fields containing comma, quote or newline are quoted on
// output; quoted fields are unescaped on input.

#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "subpheno/common.hpp"

namespace subpheno::csv {

inline std::vector<std::string> split_row(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    bool in_quotes = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                field += c;
            }
        } else if (c == '"') {
            in_quotes = true;
        } else if (c == ',') {
            out.push_back(std::move(field));
            field.clear();
        } else {
            field += c;
        }
    }
    out.push_back(std::move(field));
    return out;
}

inline std::string quote_field(std::string_view f) {
    bool needs = f.find_first_of(",\"\n\r") != std::string_view::npos;
    if (!needs) return std::string(f);
    std::string out = "\"";
    for (char c : f) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += '"';
    return out;
}

class Writer {
public:
    explicit Writer(const std::string& path) : out_(path, std::ios::binary) {
        if (!out_) throw std::runtime_error("cannot open for writing: " + path);
    }

    void row(const std::vector<std::string>& fields) {
        for (std::size_t i = 0; i < fields.size(); ++i) {
            if (i) out_ << ',';
            out_ << quote_field(fields[i]);
        }
        out_ << '\n';
    }

private:
    std::ofstream out_;
};

// Streaming reader; keeps the current line number for error messages.
class Reader {
public:
    explicit Reader(const std::string& path) : in_(path), path_(path) {
        if (!in_) throw ParseError("cannot open: " + path);
    }

    // Reads the next row; returns false at EOF. Blank lines are skipped.
    bool next(std::vector<std::string>& fields) {
        std::string line;
        while (std::getline(in_, line)) {
            ++line_no_;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            fields = split_row(line);
            return true;
        }
        return false;
    }

    std::size_t line_number() const { return line_no_; }
    const std::string& path() const { return path_; }

    [[noreturn]] void fail(const std::string& why) const {
        std::ostringstream os;
        os << path_ << ":" << line_no_ << ": " << why;
        throw ParseError(os.str());
    }

private:
    std::ifstream in_;
    std::string path_;
    std::size_t line_no_ = 0;
};

inline void expect_header(Reader& r, const std::vector<std::string>& expected) {
    std::vector<std::string> got;
    if (!r.next(got)) r.fail("missing header");
    if (got != expected) {
        std::string want;
        for (std::size_t i = 0; i < expected.size(); ++i) {
            if (i) want += ',';
            want += expected[i];
        }
        r.fail("header mismatch, expected: " + want);
    }
}

}  // namespace subpheno::csv
