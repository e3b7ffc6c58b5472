#include "landsar/raster.hpp"

#include "landsar/errors.hpp"

#include <fmt/format.h>
#include <fmt/ostream.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

namespace landsar {

ParseError::ParseError(const std::string& what, std::size_t line)
    : std::runtime_error(line ? fmt::format("line {}: {}", line, what) : what), line_(line) {}

UnknownBarrier::UnknownBarrier(const std::string& id)
    : std::invalid_argument(fmt::format("unknown barrier '{}'", id)), id_(id) {}

PhaseError::PhaseError(const std::string& command, const std::string& phase)
    : std::logic_error(fmt::format("command '{}' not allowed in phase {}", command, phase)),
      phase_(phase) {}

bool GridSpec::contains(double x, double y) const {
    return x >= origin_x && x <= max_x() && y >= origin_y && y <= max_y();
}

std::size_t GridSpec::nearest_col(double x) const {
    const double c = std::round((x - origin_x) / cell_size);
    return static_cast<std::size_t>(std::clamp(c, 0.0, static_cast<double>(n_cols - 1)));
}

std::size_t GridSpec::nearest_row(double y) const {
    const double r = std::round((y - origin_y) / cell_size);
    return static_cast<std::size_t>(std::clamp(r, 0.0, static_cast<double>(n_rows - 1)));
}

bool aligned(const GridSpec& a, const GridSpec& b, double tol) {
    return a.n_cols == b.n_cols && a.n_rows == b.n_rows && std::abs(a.cell_size - b.cell_size) <= tol &&
           std::abs(a.origin_x - b.origin_x) <= tol && std::abs(a.origin_y - b.origin_y) <= tol;
}

double Raster::min() const { return values.empty() ? 0.0 : *std::min_element(values.begin(), values.end()); }
double Raster::max() const { return values.empty() ? 0.0 : *std::max_element(values.begin(), values.end()); }

namespace {

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}

std::optional<double> parse_number(std::string_view token) {
    double value = 0.0;
    const char* first = token.data();
    const char* last = token.data() + token.size();
    if (!token.empty() && *first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc{} || ptr != last || !std::isfinite(value)) return std::nullopt;
    return value;
}

bool starts_numeric(const std::string& token) {
    return !token.empty() && (std::isdigit(static_cast<unsigned char>(token[0])) || token[0] == '-' ||
                              token[0] == '+' || token[0] == '.');
}

constexpr std::array<std::string_view, 6> kHeaderKeys = {"ncols",     "nrows",    "xllcorner",
                                                         "yllcorner", "cellsize", "nodata_value"};

}  // namespace

Raster read_esri_ascii(std::istream& in) {
    std::map<std::string, std::pair<std::string, std::size_t>> header;
    std::string line;
    std::size_t line_no = 0;
    std::vector<std::pair<std::string, std::size_t>> data_lines;

    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ls(line);
        std::string first;
        if (!(ls >> first)) continue;
        if (data_lines.empty() && !starts_numeric(first)) {
            const std::string key = lower(first);
            if (std::find(kHeaderKeys.begin(), kHeaderKeys.end(), key) == kHeaderKeys.end())
                throw ParseError(fmt::format("unknown header key '{}'", first), line_no);
            if (header.count(key)) throw ParseError(fmt::format("duplicate header key '{}'", first), line_no);
            std::string value;
            if (!(ls >> value)) throw ParseError(fmt::format("header key '{}' has no value", first), line_no);
            header[key] = {value, line_no};
            continue;
        }
        data_lines.emplace_back(line, line_no);
    }

    auto header_number = [&](const std::string& key) -> std::optional<double> {
        auto it = header.find(key);
        if (it == header.end()) return std::nullopt;
        auto v = parse_number(it->second.first);
        if (!v) throw ParseError(fmt::format("header '{}' is not numeric", key), it->second.second);
        return v;
    };
    for (std::string_view key : {"ncols", "nrows", "xllcorner", "yllcorner", "cellsize"})
        if (!header.count(std::string(key))) throw ParseError(fmt::format("missing header key '{}'", key));

    const double ncols = *header_number("ncols");
    const double nrows = *header_number("nrows");
    if (ncols != std::floor(ncols) || nrows != std::floor(nrows) || ncols < 0 || nrows < 0)
        throw ParseError("ncols/nrows must be non-negative integers");
    if (ncols < 2 || nrows < 2) throw ParseError("grid too small: need at least 2x2 samples");

    Raster r;
    r.spec.n_cols = static_cast<std::size_t>(ncols);
    r.spec.n_rows = static_cast<std::size_t>(nrows);
    r.spec.origin_x = *header_number("xllcorner");
    r.spec.origin_y = *header_number("yllcorner");
    r.spec.cell_size = *header_number("cellsize");
    r.nodata = header_number("nodata_value").value_or(kDefaultNodata);
    if (!(r.spec.cell_size > 0)) throw ParseError("cellsize must be positive");
    r.values.assign(r.spec.size(), r.nodata);

    if (data_lines.size() != r.spec.n_rows)
        throw ParseError(fmt::format("expected {} data rows, found {}", r.spec.n_rows, data_lines.size()),
                         data_lines.empty() ? line_no : data_lines.back().second);

    for (std::size_t i = 0; i < data_lines.size(); ++i) {
        const auto& [text, no] = data_lines[i];
        const std::size_t row = r.spec.n_rows - 1 - i;  // first data row is northernmost
        std::istringstream ls(text);
        std::string token;
        std::size_t col = 0;
        while (ls >> token) {
            if (col >= r.spec.n_cols)
                throw ParseError(fmt::format("row has more than {} values", r.spec.n_cols), no);
            auto v = parse_number(token);
            if (!v) throw ParseError(fmt::format("non-numeric cell '{}'", token), no);
            r.at(col++, row) = *v;
        }
        if (col != r.spec.n_cols)
            throw ParseError(fmt::format("row has {} values, expected {}", col, r.spec.n_cols), no);
    }
    return r;
}

Raster read_esri_ascii(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error(fmt::format("cannot open raster '{}'", path.string()));
    return read_esri_ascii(in);
}

void write_esri_ascii(std::ostream& out, const Raster& raster) {
    const auto& s = raster.spec;
    fmt::print(out, "ncols {}\nnrows {}\nxllcorner {}\nyllcorner {}\ncellsize {}\nNODATA_value {}\n", s.n_cols,
               s.n_rows, s.origin_x, s.origin_y, s.cell_size, raster.nodata);
    std::string row_text;
    for (std::size_t i = 0; i < s.n_rows; ++i) {
        const std::size_t row = s.n_rows - 1 - i;
        row_text.clear();
        for (std::size_t col = 0; col < s.n_cols; ++col) {
            if (col) row_text.push_back(' ');
            row_text += fmt::format("{}", raster.at(col, row));
        }
        row_text.push_back('\n');
        out << row_text;
    }
}

void write_esri_ascii(const std::filesystem::path& path, const Raster& raster) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error(fmt::format("cannot write raster '{}'", path.string()));
    write_esri_ascii(out, raster);
}

}  // namespace landsar
