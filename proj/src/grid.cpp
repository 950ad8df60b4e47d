#include "deepoheat/grid.hpp"

#include <array>
#include <charconv>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace deepoheat {

std::string format_double(double value) {
    std::array<char, 64> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
    if (ec != std::errc{}) {
        throw std::runtime_error("format_double: conversion failed");
    }
    return std::string(buf.data(), ptr);
}

namespace {

// Shortest round-trip digits of `value` as sign, digit string and the
// exponent of the first digit (value = 0.d1d2... * 10^(point)).
struct Decimal {
    bool negative = false;
    std::string digits;
    int point = 0;
};

Decimal decompose(double value) {
    std::array<char, 64> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value, std::chars_format::scientific);
    if (ec != std::errc{}) throw std::runtime_error("format_scaled: conversion failed");
    std::string_view text(buf.data(), ptr);
    Decimal d;
    if (text.front() == '-') {
        d.negative = true;
        text.remove_prefix(1);
    }
    const std::size_t e = text.find('e');
    for (char c : text.substr(0, e)) {
        if (c != '.') d.digits.push_back(c);
    }
    std::string_view exp_text = text.substr(e + 1);
    if (exp_text.front() == '+') exp_text.remove_prefix(1);
    d.point = static_cast<int>(parse_long(exp_text)) + 1;
    while (d.digits.size() > 1 && d.digits.back() == '0') d.digits.pop_back();
    return d;
}

}  // namespace

std::string format_scaled(double value, int decimal_shift) {
    if (!std::isfinite(value)) throw std::runtime_error("format_scaled: non-finite value");
    if (value == 0.0) return std::signbit(value) ? "-0" : "0";
    Decimal d = decompose(value);
    d.point += decimal_shift;
    const int n = static_cast<int>(d.digits.size());
    std::string out = d.negative ? "-" : "";
    if (d.point > 21 || d.point < -6) {
        out += d.digits.substr(0, 1);
        if (n > 1) out += "." + d.digits.substr(1);
        return out + "e" + std::to_string(d.point - 1);
    }
    if (d.point <= 0) return out + "0." + std::string(-d.point, '0') + d.digits;
    if (d.point >= n) return out + d.digits + std::string(d.point - n, '0');
    return out + d.digits.substr(0, d.point) + "." + d.digits.substr(d.point);
}

double parse_scaled(std::string_view text, int decimal_shift) {
    parse_double(text);  // validates the token
    std::string_view mantissa = text;
    long exponent = 0;
    if (const std::size_t e = text.find_first_of("eE"); e != std::string_view::npos) {
        mantissa = text.substr(0, e);
        std::string_view exp_text = text.substr(e + 1);
        if (!exp_text.empty() && exp_text.front() == '+') exp_text.remove_prefix(1);
        exponent = parse_long(exp_text);
    }
    return parse_double(std::string(mantissa) + "e" + std::to_string(exponent - decimal_shift));
}

double parse_double(std::string_view text) {
    double out = 0.0;
    const char* first = text.data();
    const char* last = text.data() + text.size();
    if (!text.empty() && *first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, out);
    if (ec != std::errc{} || ptr != last || text.empty()) {
        throw std::invalid_argument("not a number: '" + std::string(text) + "'");
    }
    return out;
}

long parse_long(std::string_view text) {
    long out = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
    if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty()) {
        throw std::invalid_argument("not an integer: '" + std::string(text) + "'");
    }
    return out;
}

std::vector<std::string_view> split_ws(std::string_view text) {
    std::vector<std::string_view> out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
        std::size_t start = pos;
        while (pos < text.size() && !std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
        if (pos > start) out.push_back(text.substr(start, pos - start));
    }
    return out;
}

Grid2D parse_matrix(std::string_view text) {
    Grid2D grid;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        auto tokens = split_ws(line);
        if (tokens.empty() || tokens.front().front() == '#') continue;
        if (grid.cols == 0) {
            grid.cols = tokens.size();
        } else if (tokens.size() != grid.cols) {
            throw std::invalid_argument("matrix line " + std::to_string(line_no) + ": expected " +
                                        std::to_string(grid.cols) + " values, got " +
                                        std::to_string(tokens.size()));
        }
        for (auto tok : tokens) {
            double v = parse_double(tok);
            if (!std::isfinite(v)) {
                throw std::invalid_argument("matrix line " + std::to_string(line_no) + ": non-finite value");
            }
            grid.data.push_back(v);
        }
        ++grid.rows;
    }
    if (grid.rows == 0) throw std::invalid_argument("empty matrix");
    return grid;
}

Grid2D read_matrix(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open matrix file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return parse_matrix(ss.str());
    } catch (const std::invalid_argument& e) {
        throw std::invalid_argument(path.string() + ": " + e.what());
    }
}

void write_matrix(const Grid2D& grid, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write matrix file " + path.string());
    for (std::size_t r = 0; r < grid.rows; ++r) {
        for (std::size_t c = 0; c < grid.cols; ++c) {
            if (c) out << ' ';
            out << format_double(grid(r, c));
        }
        out << '\n';
    }
}

Grid3D read_tensor(const std::filesystem::path& path, std::size_t ny, std::size_t nz) {
    Grid2D flat = read_matrix(path);
    if (flat.rows != ny * nz) {
        throw std::invalid_argument(path.string() + ": expected " + std::to_string(ny * nz) +
                                    " rows (ny*nz), got " + std::to_string(flat.rows));
    }
    Grid3D t;
    t.nx = flat.cols;
    t.ny = ny;
    t.nz = nz;
    t.data = std::move(flat.data);
    return t;
}

void write_tensor(const Grid3D& tensor, const std::filesystem::path& path) {
    Grid2D flat;
    flat.rows = tensor.ny * tensor.nz;
    flat.cols = tensor.nx;
    flat.data = tensor.data;
    write_matrix(flat, path);
}

}  // namespace deepoheat
