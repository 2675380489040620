#include "fedlora/metrics.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fedlora/errors.hpp"

namespace fedlora {

double evaluate_accuracy(const LoraMlp& model, const Dataset& data,
                         const std::vector<std::size_t>& rows) {
    if (rows.empty()) throw DataError("evaluate_accuracy: empty evaluation set");
    std::size_t hits = 0;
    std::vector<double> x(data.features.cols);
    for (std::size_t r : rows) {
        std::copy_n(data.features.row_ptr(r), data.features.cols, x.begin());
        const std::vector<double> logits = model_forward(model, x);
        std::size_t best = 0;
        for (std::size_t c = 1; c < logits.size(); ++c) {
            if (logits[c] > logits[best]) best = c;
        }
        if (best == data.labels[r]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(rows.size());
}

ParamReport param_counts(const LoraMlp& model, const StrategyConfig& strategy,
                         std::size_t clients) {
    const std::uint64_t a_elems = adapter_a_elements(model);
    const std::uint64_t b_elems = adapter_b_elements(model);
    const std::uint64_t head = head_elements(model);
    const std::uint64_t trainable = a_elems + b_elems + head;

    ParamReport rep;
    rep.trainable_per_client = trainable;
    switch (strategy.name) {
        case Strategy::epfl:
            // B goes up for distance computation but never comes back down.
            rep.communicated_up = a_elems + b_elems;
            rep.communicated_down = a_elems;
            if (strategy.aggregate_head) {
                rep.communicated_up += head;
                rep.communicated_down += head;
            }
            break;
        case Strategy::simple_avg_a:
            rep.communicated_up = a_elems;
            rep.communicated_down = a_elems;
            break;
        case Strategy::fedavg:
        case Strategy::fedprox:
        case Strategy::apfl:
            rep.communicated_up = trainable;
            rep.communicated_down = trainable;
            break;
        case Strategy::scaffold:
            // model plus control variate, both directions
            rep.communicated_up = 2 * trainable;
            rep.communicated_down = 2 * trainable;
            break;
        case Strategy::local_only:
            rep.communicated_up = 0;
            rep.communicated_down = 0;
            break;
    }
    rep.total_per_round = static_cast<std::uint64_t>(clients) *
                          (trainable + rep.communicated_up + rep.communicated_down);
    return rep;
}

std::uint64_t full_model_elements(const LoraMlp& model) {
    return frozen_elements(model) + head_elements(model);
}

namespace {

std::string format_double(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

void write_atomically(const std::filesystem::path& path, const std::string& contents) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw DataError("write_report: cannot open " + tmp.string());
        out << contents;
        if (!out) throw DataError("write_report: failed writing " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace

void write_report(const Report& report, const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);

    std::ostringstream trace;
    trace << "round,client,val_accuracy,train_loss\n";
    for (const RoundMetrics& rm : report.trace) {
        for (std::size_t c = 0; c < rm.per_client.size(); ++c) {
            trace << rm.round << ',' << c << ','
                  << format_double(rm.per_client[c].val_accuracy) << ','
                  << format_double(rm.per_client[c].train_loss) << '\n';
        }
    }
    write_atomically(out_dir / "trace.csv", trace.str());

    nlohmann::ordered_json j;
    j["schema_version"] = 1;
    j["strategy"] = report.strategy;
    j["seed"] = report.seed;
    j["clients"] = report.clients;
    j["config"] = nlohmann::ordered_json::parse(report.config_echo);
    j["trace"] = nlohmann::ordered_json::array();
    for (const RoundMetrics& rm : report.trace) {
        nlohmann::ordered_json jr;
        jr["round"] = rm.round;
        jr["mean_accuracy"] = rm.mean_accuracy;
        jr["per_client"] = nlohmann::ordered_json::array();
        for (const auto& pc : rm.per_client) {
            jr["per_client"].push_back(nlohmann::ordered_json{
                {"val_accuracy", pc.val_accuracy}, {"train_loss", pc.train_loss}});
        }
        j["trace"].push_back(std::move(jr));
    }
    j["final_test_accuracy"] = report.final_test_accuracy;
    j["mean_final_accuracy"] = report.mean_final_accuracy;
    j["param_report"] = nlohmann::ordered_json{
        {"trainable_per_client", report.params.trainable_per_client},
        {"communicated_up", report.params.communicated_up},
        {"communicated_down", report.params.communicated_down},
        {"total_per_round", report.params.total_per_round}};
    write_atomically(out_dir / "report.json", j.dump(2) + "\n");

    if (report.final_weights) {
        const Matrix& s = *report.final_weights;
        std::ostringstream weights;
        for (std::size_t r = 0; r < s.rows; ++r) {
            for (std::size_t c = 0; c < s.cols; ++c) {
                if (c > 0) weights << ',';
                weights << format_double(s.at(r, c));
            }
            weights << '\n';
        }
        write_atomically(out_dir / "weights_final.csv", weights.str());
    }
}

std::vector<RoundMetrics> read_trace_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("read_trace_csv: cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "round,client,val_accuracy,train_loss") {
        throw DataError("read_trace_csv: bad header in " + path.string());
    }

    std::vector<RoundMetrics> rounds;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (fields.size() != 4) {
            throw DataError("read_trace_csv: malformed row '" + line + "'");
        }
        const auto parse_u = [&](const std::string& s) {
            std::size_t v = 0;
            auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
            if (ec != std::errc{} || p != s.data() + s.size()) {
                throw DataError("read_trace_csv: bad integer '" + s + "'");
            }
            return v;
        };
        const auto parse_d = [&](const std::string& s) {
            double v = 0.0;
            auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
            if (ec != std::errc{} || p != s.data() + s.size()) {
                throw DataError("read_trace_csv: bad number '" + s + "'");
            }
            return v;
        };
        const std::size_t round = parse_u(fields[0]);
        const std::size_t client = parse_u(fields[1]);
        if (rounds.empty() || rounds.back().round != round) {
            rounds.push_back(RoundMetrics{round, {}, 0.0});
        }
        if (client != rounds.back().per_client.size()) {
            throw DataError("read_trace_csv: out-of-order client index in " +
                            path.string());
        }
        rounds.back().per_client.push_back({parse_d(fields[2]), parse_d(fields[3])});
    }
    for (RoundMetrics& rm : rounds) {
        double sum = 0.0;
        for (const auto& pc : rm.per_client) sum += pc.val_accuracy;
        rm.mean_accuracy = sum / static_cast<double>(rm.per_client.size());
    }
    return rounds;
}

}  // namespace fedlora
