#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "modeconn/curve.hpp"
#include "modeconn/repair.hpp"

namespace modeconn {

// All emitted CSVs start with a "# modeconn-csv-v1" schema line; columns are
// stable within a schema version. Doubles print with %.17g so reruns of a
// deterministic pipeline produce identical bytes.

std::string format_double(double v);

void write_text_atomic(const std::string& path, const std::string& content);

// Columns: t, one per metric, then a semicolon-joined error column.
std::string profile_csv(const PathProfile& profile);
void write_profile_csv(const std::string& path, const PathProfile& profile);

// Columns: method, bonafide_size, chosen_t, clean_accuracy, attack_success,
// seed. Runtime is deliberately excluded (it varies between reruns) and
// lives in the JSON report instead.
std::string repair_reports_csv(const std::vector<RepairReport>& reports);
void write_repair_reports_csv(const std::string& path, const std::vector<RepairReport>& reports);

nlohmann::json repair_report_json(const RepairReport& report);
nlohmann::json profile_json(const PathProfile& profile);

void write_json_atomic(const std::string& path, const nlohmann::json& j);

}  // namespace modeconn
