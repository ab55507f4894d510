#include "interpomae/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <unordered_map>

namespace interpomae {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_cells(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            cells.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    cells.push_back(trim(cur));
    return cells;
}

bool parse_double(const std::string& text, double& out) {
    const char* first = text.data();
    const char* last = first + text.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && ptr == last && !text.empty();
}

double parse_cell(const std::string& text, std::size_t row, std::size_t col) {
    double v = 0.0;
    if (!parse_double(text, v)) {
        throw std::runtime_error("csv: cannot parse cell at row " + std::to_string(row) +
                                 ", column " + std::to_string(col) + ": '" + text + "'");
    }
    if (!std::isfinite(v)) {
        throw std::runtime_error("csv: non-finite value at row " + std::to_string(row) +
                                 ", column " + std::to_string(col));
    }
    return v;
}

std::string format_double(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, ptr);
}

}  // namespace

std::vector<std::size_t> MaskPattern::visible() const {
    std::vector<std::size_t> out;
    out.reserve(total - masked.size());
    std::size_t m = 0;
    for (std::size_t t = 0; t < total; ++t) {
        if (m < masked.size() && masked[m] == t) {
            ++m;
        } else {
            out.push_back(t);
        }
    }
    return out;
}

bool MaskPattern::is_masked(std::size_t slot) const {
    return std::binary_search(masked.begin(), masked.end(), slot);
}

NormStats::NormStats(std::vector<double> mins, std::vector<double> maxs)
    : min_(std::move(mins)), max_(std::move(maxs)), fitted_(true) {
    if (min_.size() != max_.size()) {
        throw std::invalid_argument("norm stats: min/max channel counts disagree");
    }
    constant_.resize(min_.size());
    for (std::size_t c = 0; c < min_.size(); ++c) {
        if (max_[c] < min_[c]) {
            throw std::invalid_argument("norm stats: max < min in channel " + std::to_string(c));
        }
        constant_[c] = (max_[c] == min_[c]);
    }
}

std::vector<Series> load_csv(const std::string& path, const std::string& id_column) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("csv: cannot open '" + path + "'");

    std::vector<std::pair<std::size_t, std::vector<std::string>>> rows;  // (line no, cells)
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        rows.emplace_back(line_no, split_cells(line));
    }
    if (rows.empty()) throw std::runtime_error("csv: no data rows in '" + path + "'");

    // Header detection: a first row with any non-numeric cell is a header.
    bool has_header = false;
    for (const std::string& cell : rows.front().second) {
        double v;
        if (!parse_double(cell, v)) {
            has_header = true;
            break;
        }
    }

    std::size_t id_idx = static_cast<std::size_t>(-1);
    std::vector<std::size_t> channel_cols;
    const std::size_t width = rows.front().second.size();
    if (has_header) {
        const auto& header = rows.front().second;
        for (std::size_t c = 0; c < header.size(); ++c) {
            if (!id_column.empty() && header[c] == id_column) {
                id_idx = c;
            } else {
                channel_cols.push_back(c);
            }
        }
        if (!id_column.empty() && id_idx == static_cast<std::size_t>(-1)) {
            throw std::runtime_error("csv: id column '" + id_column + "' not found in header");
        }
    } else {
        if (!id_column.empty()) {
            throw std::runtime_error("csv: id column '" + id_column +
                                     "' requested but the file has no header");
        }
        for (std::size_t c = 0; c < width; ++c) channel_cols.push_back(c);
    }
    const std::size_t first_data = has_header ? 1 : 0;
    if (rows.size() <= first_data) throw std::runtime_error("csv: no data rows in '" + path + "'");
    if (channel_cols.empty()) throw std::runtime_error("csv: no numeric columns in '" + path + "'");

    std::vector<std::string> group_order;
    std::unordered_map<std::string, std::vector<std::vector<double>>> groups;
    for (std::size_t r = first_data; r < rows.size(); ++r) {
        const auto& [row_no, cells] = rows[r];
        if (cells.size() != width) {
            throw std::runtime_error("csv: row " + std::to_string(row_no) + " has " +
                                     std::to_string(cells.size()) + " cells, expected " +
                                     std::to_string(width));
        }
        std::string id = "0";
        if (id_idx != static_cast<std::size_t>(-1)) id = cells[id_idx];
        std::vector<double> values(channel_cols.size());
        for (std::size_t c = 0; c < channel_cols.size(); ++c) {
            values[c] = parse_cell(cells[channel_cols[c]], row_no, channel_cols[c] + 1);
        }
        auto it = groups.find(id);
        if (it == groups.end()) {
            group_order.push_back(id);
            it = groups.emplace(id, std::vector<std::vector<double>>{}).first;
        }
        it->second.push_back(std::move(values));
    }

    std::vector<Series> out;
    out.reserve(group_order.size());
    const std::size_t expected_len = groups.at(group_order.front()).size();
    for (const std::string& id : group_order) {
        const auto& steps = groups.at(id);
        if (steps.size() != expected_len) {
            throw std::runtime_error("csv: ragged groups, series '" + group_order.front() +
                                     "' has " + std::to_string(expected_len) + " rows but '" + id +
                                     "' has " + std::to_string(steps.size()));
        }
        Tensor values({steps.size(), channel_cols.size()});
        for (std::size_t t = 0; t < steps.size(); ++t)
            for (std::size_t c = 0; c < channel_cols.size(); ++c) values.at(t, c) = steps[t][c];
        out.push_back(Series{std::move(values), id});
    }
    return out;
}

void write_csv(const std::string& path, const std::vector<Series>& dataset) {
    if (dataset.empty()) throw std::invalid_argument("write_csv: empty dataset");
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_csv: cannot open '" + path + "' for writing");
    const std::size_t channels = dataset.front().channels();
    out << "id";
    for (std::size_t c = 0; c < channels; ++c) out << ",c" << c;
    out << "\n";
    for (const Series& s : dataset) {
        if (s.channels() != channels) {
            throw std::invalid_argument("write_csv: channel count mismatch between series");
        }
        for (std::size_t t = 0; t < s.length(); ++t) {
            out << s.id;
            for (std::size_t c = 0; c < channels; ++c)
                out << ',' << format_double(s.values.at(t, c));
            out << "\n";
        }
    }
    if (!out) throw std::runtime_error("write_csv: write failed for '" + path + "'");
}

std::vector<Series> generate_sines(std::size_t n, std::size_t length, std::size_t channels,
                                   std::uint64_t seed) {
    if (n < 1 || length < 1 || channels < 1) {
        throw std::invalid_argument("generate_sines: n, length and channels must be positive");
    }
    Rng rng(seed);
    std::vector<Series> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Tensor values({length, channels});
        for (std::size_t c = 0; c < channels; ++c) {
            const double freq = rng.uniform(0.01, 0.05);
            const double phase = rng.uniform(0.0, kTwoPi);
            for (std::size_t t = 0; t < length; ++t) {
                values.at(t, c) = std::sin(kTwoPi * freq * static_cast<double>(t) + phase);
            }
        }
        out.push_back(Series{std::move(values), std::to_string(i)});
    }
    return out;
}

NormStats fit_normalizer(const std::vector<Series>& train) {
    if (train.empty()) throw std::invalid_argument("fit_normalizer: empty training list");
    const std::size_t channels = train.front().channels();
    std::vector<double> mins(channels, std::numeric_limits<double>::infinity());
    std::vector<double> maxs(channels, -std::numeric_limits<double>::infinity());
    for (const Series& s : train) {
        if (s.channels() != channels) {
            throw std::invalid_argument("fit_normalizer: channel count mismatch between series");
        }
        for (std::size_t t = 0; t < s.length(); ++t)
            for (std::size_t c = 0; c < channels; ++c) {
                mins[c] = std::min(mins[c], s.values.at(t, c));
                maxs[c] = std::max(maxs[c], s.values.at(t, c));
            }
    }
    return NormStats(std::move(mins), std::move(maxs));
}

Series apply_normalizer(const NormStats& stats, const Series& s) {
    if (!stats.fitted()) throw std::logic_error("normalizer: apply before fit");
    if (s.channels() != stats.channels()) {
        throw std::invalid_argument("normalizer: series has " + std::to_string(s.channels()) +
                                    " channels, stats cover " + std::to_string(stats.channels()));
    }
    Series out{Tensor(s.values.shape()), s.id};
    for (std::size_t t = 0; t < s.length(); ++t)
        for (std::size_t c = 0; c < s.channels(); ++c) {
            if (stats.is_constant(c)) {
                out.values.at(t, c) = 0.5;
            } else {
                out.values.at(t, c) = (s.values.at(t, c) - stats.channel_min(c)) /
                                      (stats.channel_max(c) - stats.channel_min(c));
            }
        }
    return out;
}

Series invert_normalizer(const NormStats& stats, const Series& s) {
    if (!stats.fitted()) throw std::logic_error("normalizer: invert before fit");
    if (s.channels() != stats.channels()) {
        throw std::invalid_argument("normalizer: series has " + std::to_string(s.channels()) +
                                    " channels, stats cover " + std::to_string(stats.channels()));
    }
    Series out{Tensor(s.values.shape()), s.id};
    for (std::size_t t = 0; t < s.length(); ++t)
        for (std::size_t c = 0; c < s.channels(); ++c) {
            out.values.at(t, c) =
                stats.channel_min(c) +
                s.values.at(t, c) * (stats.channel_max(c) - stats.channel_min(c));
        }
    return out;
}

PatchGrid patchify(const Series& s, std::size_t patch_len) {
    if (patch_len == 0) throw std::invalid_argument("patchify: patch length must be positive");
    const std::size_t length = s.length();
    if (length % patch_len != 0) {
        throw std::invalid_argument("patchify: patch length " + std::to_string(patch_len) +
                                    " does not divide series length " + std::to_string(length) +
                                    " (remainder " + std::to_string(length % patch_len) + ")");
    }
    // [L,C] and [T,P,C] share the same row-major layout when L = T*P.
    Tensor patches({length / patch_len, patch_len, s.channels()}, s.values.vec());
    return PatchGrid{std::move(patches), s.id};
}

Series unpatchify(const PatchGrid& grid) {
    Tensor values({grid.patch_count() * grid.patch_len(), grid.channels()}, grid.patches.vec());
    return Series{std::move(values), grid.origin_id};
}

namespace {

// Number of ways to place `blocks` disjoint runs of `size` slots in `total`
// slots: C(total - blocks*size + blocks, blocks). Saturates on overflow; the
// guard only needs zero vs nonzero.
unsigned long long count_block_placements(std::size_t total, std::size_t blocks,
                                          std::size_t size) {
    if (blocks * size > total) return 0;
    const unsigned long long n = total - blocks * size + blocks;
    unsigned long long result = 1;
    for (unsigned long long i = 1; i <= blocks; ++i) {
        const unsigned long long num = n - blocks + i;
        if (result > (~0ULL) / num) return ~0ULL;
        result = result * num / i;
    }
    return result;
}

}  // namespace

MaskPattern sample_mask(std::size_t total, const MaskSpec& spec, Rng& rng) {
    MaskPattern out;
    out.total = total;
    if (spec.mode == MaskSpec::Mode::Uniform) {
        if (spec.count > total) {
            throw std::invalid_argument("sample_mask: M=" + std::to_string(spec.count) +
                                        " exceeds T=" + std::to_string(total));
        }
        if (spec.count == 0) return out;
        std::vector<std::size_t> idx(total);
        for (std::size_t i = 0; i < total; ++i) idx[i] = i;
        for (std::size_t i = 0; i < spec.count; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(rng.below(total - i));
            std::swap(idx[i], idx[j]);
        }
        out.masked.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(spec.count));
        std::sort(out.masked.begin(), out.masked.end());
        return out;
    }

    const std::size_t b = spec.count, s = spec.block_size;
    if (b == 0) return out;
    if (s == 0) throw std::invalid_argument("sample_mask: block size must be positive");
    if (count_block_placements(total, b, s) == 0) {
        throw std::invalid_argument("sample_mask: no valid placement for " + std::to_string(b) +
                                    " blocks of size " + std::to_string(s) +
                                    " in T=" + std::to_string(total));
    }
    std::vector<std::size_t> starts(b);
    while (true) {
        for (std::size_t i = 0; i < b; ++i)
            starts[i] = static_cast<std::size_t>(rng.below(total - s + 1));
        std::sort(starts.begin(), starts.end());
        bool ok = true;
        for (std::size_t i = 0; i + 1 < b; ++i) {
            if (starts[i + 1] < starts[i] + s) {
                ok = false;
                break;
            }
        }
        if (ok) break;
    }
    out.masked.reserve(b * s);
    for (std::size_t start : starts)
        for (std::size_t j = 0; j < s; ++j) out.masked.push_back(start + j);
    std::sort(out.masked.begin(), out.masked.end());
    return out;
}

std::pair<Tensor, Tensor> split_patches(const PatchGrid& grid, const MaskPattern& mask) {
    if (mask.total != grid.patch_count()) {
        throw std::invalid_argument("split_patches: mask over T=" + std::to_string(mask.total) +
                                    " does not match grid T=" +
                                    std::to_string(grid.patch_count()));
    }
    const std::size_t p = grid.patch_len(), c = grid.channels();
    const std::size_t stride = p * c;
    const std::size_t m = mask.masked_count();
    const std::size_t n = mask.visible_count();
    Tensor visible({n, p, c});
    Tensor masked({m, p, c});
    std::size_t vi = 0, mi = 0;
    for (std::size_t t = 0; t < grid.patch_count(); ++t) {
        const double* src = grid.patches.data() + t * stride;
        double* dst = mask.is_masked(t) ? masked.data() + (mi++) * stride
                                        : visible.data() + (vi++) * stride;
        std::copy(src, src + stride, dst);
    }
    return {std::move(visible), std::move(masked)};
}

}  // namespace interpomae
