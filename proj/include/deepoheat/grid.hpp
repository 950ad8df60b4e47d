#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace deepoheat {

/// Dense row-major matrix of doubles. Used for surface grids (rows = v axis,
/// columns = u axis, row 0 at the v-minimum edge) and text matrix files.
struct Grid2D {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Grid2D() = default;
    Grid2D(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    bool empty() const { return data.empty(); }
    std::size_t size() const { return data.size(); }

    bool operator==(const Grid2D&) const = default;
};

/// Nodal 3D tensor with i fastest: index = i + nx * (j + ny * k).
struct Grid3D {
    std::size_t nx = 0;
    std::size_t ny = 0;
    std::size_t nz = 0;
    std::vector<double> data;

    Grid3D() = default;
    Grid3D(std::size_t x, std::size_t y, std::size_t z, double fill = 0.0)
        : nx(x), ny(y), nz(z), data(x * y * z, fill) {}

    double& operator()(std::size_t i, std::size_t j, std::size_t k) { return data[i + nx * (j + ny * k)]; }
    double operator()(std::size_t i, std::size_t j, std::size_t k) const { return data[i + nx * (j + ny * k)]; }

    bool operator==(const Grid3D&) const = default;
};

/// Shortest decimal text that parses back to exactly `value`.
std::string format_double(double value);

/// Writes value * 10^decimal_shift by moving the decimal point of the
/// shortest round-trip digits, so parse_scaled(text, decimal_shift) returns
/// value bit-for-bit. Used for SI quantities stored in mm or mW.
std::string format_scaled(double value, int decimal_shift);
double parse_scaled(std::string_view text, int decimal_shift);

/// Strict full-token parse; throws std::invalid_argument on trailing junk.
double parse_double(std::string_view text);
long parse_long(std::string_view text);

/// Whitespace tokenizer.
std::vector<std::string_view> split_ws(std::string_view text);

/// Matrix text format: one row per line, space-separated decimal floats.
/// Blank lines and lines starting with '#' are skipped.
Grid2D read_matrix(const std::filesystem::path& path);
Grid2D parse_matrix(std::string_view text);
void write_matrix(const Grid2D& grid, const std::filesystem::path& path);

/// 3D tensors use the same text format with nz consecutive blocks of ny rows.
Grid3D read_tensor(const std::filesystem::path& path, std::size_t ny, std::size_t nz);
void write_tensor(const Grid3D& tensor, const std::filesystem::path& path);

}  // namespace deepoheat
