#include "convpred/audit.hpp"

#include <json.hpp>

#include "convpred/common.hpp"

namespace convpred {

std::string AuditLog::to_ndjson() const {
    std::string out;
    for (const auto& e : entries_) {
        nlohmann::json j;
        j["event"] = e.event;
        for (const auto& [k, v] : e.fields) j[k] = v;
        out += j.dump();
        out += '\n';
    }
    return out;
}

void AuditLog::write_ndjson(const std::filesystem::path& path) const {
    write_text_file(path, to_ndjson());
}

}  // namespace convpred
