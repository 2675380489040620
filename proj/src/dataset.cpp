#include "fedlora/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "fedlora/errors.hpp"

namespace fedlora {

Dataset generate_synthetic(const SyntheticSpec& spec, RngStream rng) {
    if (spec.classes < 2) throw ConfigError("generate_synthetic: classes must be >= 2");
    if (spec.dim < 1) throw ConfigError("generate_synthetic: dim must be >= 1");
    if (spec.clusters < 1 || spec.samples_per_class < 1 || spec.groups_per_cluster < 1) {
        throw ConfigError("generate_synthetic: clusters, samples_per_class, and "
                          "groups_per_cluster must be >= 1");
    }
    if (spec.separation < 0.0 || spec.cluster_spread < 0.0 ||
        spec.cluster_noise_scale < 0.0) {
        throw ConfigError("generate_synthetic: separation, cluster_spread, and "
                          "cluster_noise_scale must be >= 0");
    }
    if (spec.cluster_noise_dims > spec.dim) {
        throw ConfigError("generate_synthetic: cluster_noise_dims cannot exceed dim");
    }

    // base mean per blob, shared by all clusters; per-cluster offsets model
    // site-specific feature shift
    std::vector<std::vector<double>> means(spec.classes, std::vector<double>(spec.dim));
    for (auto& mean : means) {
        for (double& v : mean) v = rng.normal(0.0, spec.separation);
    }
    std::vector<std::vector<std::vector<double>>> offsets(
        spec.clusters,
        std::vector<std::vector<double>>(spec.classes, std::vector<double>(spec.dim, 0.0)));
    if (spec.cluster_spread > 0.0) {
        for (auto& cluster : offsets) {
            for (auto& offset : cluster) {
                for (double& v : offset) v = rng.normal(0.0, spec.cluster_spread);
            }
        }
    }

    // unit directions of each cluster's correlated noise
    const bool structured_noise =
        spec.cluster_noise_dims > 0 && spec.cluster_noise_scale > 0.0;
    std::vector<std::vector<std::vector<double>>> noise_dirs;
    if (structured_noise) {
        noise_dirs.assign(spec.clusters,
                          std::vector<std::vector<double>>(
                              spec.cluster_noise_dims, std::vector<double>(spec.dim)));
        for (auto& cluster : noise_dirs) {
            for (auto& dir : cluster) {
                double norm_sq = 0.0;
                for (double& v : dir) {
                    v = rng.normal();
                    norm_sq += v * v;
                }
                const double inv_norm = 1.0 / std::sqrt(norm_sq);
                for (double& v : dir) v *= inv_norm;
            }
        }
    }

    const std::size_t per_cluster = spec.classes * spec.samples_per_class;
    const std::size_t total = spec.clusters * per_cluster;
    Dataset ds;
    ds.features = Matrix(total, spec.dim);
    ds.labels.resize(total);
    ds.group_ids = std::vector<std::size_t>(total);
    ds.classes = spec.classes;

    std::size_t row = 0;
    for (std::size_t g = 0; g < spec.clusters; ++g) {
        std::size_t within = 0;
        for (std::size_t blob = 0; blob < spec.classes; ++blob) {
            const std::size_t label =
                spec.permute_labels ? (blob + g) % spec.classes : blob;
            for (std::size_t s = 0; s < spec.samples_per_class; ++s, ++row, ++within) {
                double* feat = ds.features.row_ptr(row);
                for (std::size_t d = 0; d < spec.dim; ++d) {
                    feat[d] = means[blob][d] + offsets[g][blob][d] + rng.normal();
                }
                if (structured_noise) {
                    for (const auto& dir : noise_dirs[g]) {
                        const double z = rng.normal(0.0, spec.cluster_noise_scale);
                        for (std::size_t d = 0; d < spec.dim; ++d) feat[d] += z * dir[d];
                    }
                }
                ds.labels[row] = label;
                (*ds.group_ids)[row] =
                    g * spec.groups_per_cluster + within % spec.groups_per_cluster;
            }
        }
    }
    return ds;
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

double parse_double(const std::string& s, std::size_t row, const std::string& col) {
    double value = 0.0;
    const char* begin = s.data();
    const char* end = begin + s.size();
    auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc{} || ptr != end) {
        throw DataError("load_csv: non-numeric value '" + s + "' in column '" + col +
                        "' at data row " + std::to_string(row));
    }
    return value;
}

std::string format_double(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

}  // namespace

Dataset load_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("load_csv: cannot open " + path.string());

    std::string line;
    if (!std::getline(in, line)) throw DataError("load_csv: empty file " + path.string());
    if (!line.empty() && line.back() == '\r') line.pop_back();

    const std::vector<std::string> header = split_line(line);
    std::ptrdiff_t label_col = -1;
    std::ptrdiff_t group_col = -1;
    std::vector<std::size_t> feature_cols;
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == "label") {
            label_col = static_cast<std::ptrdiff_t>(i);
        } else if (header[i] == "group") {
            group_col = static_cast<std::ptrdiff_t>(i);
        } else {
            feature_cols.push_back(i);
        }
    }
    if (label_col < 0) {
        throw DataError("load_csv: missing required 'label' column in " + path.string());
    }
    if (feature_cols.empty()) {
        throw DataError("load_csv: no feature columns in " + path.string());
    }

    std::vector<double> flat;
    std::vector<std::string> raw_labels;
    std::vector<std::size_t> groups;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        ++row;
        const std::vector<std::string> fields = split_line(line);
        if (fields.size() != header.size()) {
            throw DataError("load_csv: ragged row " + std::to_string(row) + " has " +
                            std::to_string(fields.size()) + " fields, expected " +
                            std::to_string(header.size()));
        }
        for (std::size_t c : feature_cols) {
            flat.push_back(parse_double(fields[c], row, header[c]));
        }
        raw_labels.push_back(fields[static_cast<std::size_t>(label_col)]);
        if (group_col >= 0) {
            const std::string& g = fields[static_cast<std::size_t>(group_col)];
            std::size_t value = 0;
            auto [ptr, ec] = std::from_chars(g.data(), g.data() + g.size(), value);
            if (ec != std::errc{} || ptr != g.data() + g.size()) {
                throw DataError("load_csv: non-integer group '" + g + "' at data row " +
                                std::to_string(row));
            }
            groups.push_back(value);
        }
    }
    if (row == 0) throw DataError("load_csv: no data rows in " + path.string());

    Dataset ds;
    ds.features = Matrix(row, feature_cols.size());
    ds.features.data = std::move(flat);

    // densify labels in first-appearance order
    std::map<std::string, std::size_t> seen;
    ds.labels.reserve(row);
    for (const std::string& s : raw_labels) {
        auto [it, inserted] = seen.try_emplace(s, seen.size());
        ds.labels.push_back(it->second);
    }
    ds.classes = seen.size();
    if (ds.classes < 2) {
        throw DataError("load_csv: need at least 2 distinct labels, found " +
                        std::to_string(ds.classes));
    }
    if (group_col >= 0) ds.group_ids = std::move(groups);
    if (!all_finite(ds.features)) {
        throw DataError("load_csv: non-finite feature value in " + path.string());
    }
    return ds;
}

void save_csv(const Dataset& dataset, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);  // binary keeps LF endings everywhere
    if (!out) throw DataError("save_csv: cannot open " + path.string() + " for writing");

    for (std::size_t c = 0; c < dataset.features.cols; ++c) {
        out << 'f' << c << ',';
    }
    out << "label";
    if (dataset.group_ids) out << ",group";
    out << '\n';

    for (std::size_t r = 0; r < dataset.size(); ++r) {
        const double* feat = dataset.features.row_ptr(r);
        for (std::size_t c = 0; c < dataset.features.cols; ++c) {
            out << format_double(feat[c]) << ',';
        }
        out << dataset.labels[r];
        if (dataset.group_ids) out << ',' << (*dataset.group_ids)[r];
        out << '\n';
    }
}

Dataset subsample(const Dataset& dataset, double fraction, RngStream rng) {
    if (fraction <= 0.0 || fraction > 1.0) {
        throw ConfigError("subsample: fraction must be in (0, 1]");
    }
    if (fraction == 1.0) return dataset;

    const std::size_t n = dataset.size();
    const auto keep = static_cast<std::size_t>(
        std::llround(fraction * static_cast<double>(n)));
    if (keep == 0) throw DataError("subsample: fraction keeps zero samples");

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);
    order.resize(keep);
    std::sort(order.begin(), order.end());

    Dataset out;
    out.features = Matrix(keep, dataset.features.cols);
    out.labels.resize(keep);
    out.classes = dataset.classes;
    if (dataset.group_ids) out.group_ids = std::vector<std::size_t>(keep);
    for (std::size_t i = 0; i < keep; ++i) {
        const std::size_t src = order[i];
        std::copy_n(dataset.features.row_ptr(src), dataset.features.cols,
                    out.features.row_ptr(i));
        out.labels[i] = dataset.labels[src];
        if (dataset.group_ids) (*out.group_ids)[i] = (*dataset.group_ids)[src];
    }
    return out;
}

}  // namespace fedlora
