#include "modeconn/report.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace modeconn {

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_text_atomic(const std::string& path, const std::string& content) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open for writing: " + tmp);
        out << content;
        if (!out) throw std::runtime_error("write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

std::string profile_csv(const PathProfile& profile) {
    std::string out = "# modeconn-csv-v1\n";
    out += "t";
    for (const auto& name : profile.metric_names) out += "," + name;
    out += ",errors\n";
    for (const auto& rec : profile.records) {
        out += format_double(rec.t);
        for (const auto& name : profile.metric_names) {
            out += ",";
            bool found = false;
            for (const auto& [n, v] : rec.values)
                if (n == name) {
                    out += format_double(v);
                    found = true;
                    break;
                }
            if (!found) out += "";  // failed evaluator leaves the cell empty
        }
        out += ",";
        bool first = true;
        for (const auto& [n, msg] : rec.errors) {
            if (!first) out += ";";
            out += n + ": " + msg;
            first = false;
        }
        out += "\n";
    }
    return out;
}

void write_profile_csv(const std::string& path, const PathProfile& profile) {
    write_text_atomic(path, profile_csv(profile));
}

std::string repair_reports_csv(const std::vector<RepairReport>& reports) {
    std::string out = "# modeconn-csv-v1\n";
    out += "method,bonafide_size,chosen_t,clean_accuracy,attack_success,seed\n";
    for (const auto& r : reports) {
        out += r.method + "," + std::to_string(r.bonafide_size) + "," + format_double(r.chosen_t) +
               "," + format_double(r.clean_accuracy) + "," + format_double(r.attack_success) +
               "," + std::to_string(r.seed) + "\n";
    }
    return out;
}

void write_repair_reports_csv(const std::string& path, const std::vector<RepairReport>& reports) {
    write_text_atomic(path, repair_reports_csv(reports));
}

nlohmann::json repair_report_json(const RepairReport& r) {
    nlohmann::json j;
    j["method"] = r.method;
    j["bonafide_size"] = r.bonafide_size;
    if (std::isnan(r.chosen_t))
        j["chosen_t"] = nullptr;
    else
        j["chosen_t"] = r.chosen_t;
    j["clean_accuracy"] = r.clean_accuracy;
    j["attack_success"] = r.attack_success;
    j["runtime_seconds"] = r.runtime_seconds;
    j["seed"] = r.seed;
    return j;
}

nlohmann::json profile_json(const PathProfile& profile) {
    nlohmann::json j;
    j["t_grid"] = profile.t_grid;
    j["metrics"] = profile.metric_names;
    nlohmann::json records = nlohmann::json::array();
    for (const auto& rec : profile.records) {
        nlohmann::json rj;
        rj["t"] = rec.t;
        for (const auto& [n, v] : rec.values) rj[n] = v;
        if (!rec.errors.empty()) {
            nlohmann::json errs;
            for (const auto& [n, msg] : rec.errors) errs[n] = msg;
            rj["errors"] = errs;
        }
        records.push_back(rj);
    }
    j["records"] = records;
    return j;
}

void write_json_atomic(const std::string& path, const nlohmann::json& j) {
    write_text_atomic(path, j.dump(2) + "\n");
}

}  // namespace modeconn
