#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace convpred {

// Minimal CSV table. Quoted fields with embedded commas/newlines/quotes are
// supported on both read and write; everything is kept as strings.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int column(const std::string& name) const;          // -1 if absent
    int require_column(const std::string& name) const;  // throws DataError
};

CsvTable read_csv(const std::filesystem::path& path);
CsvTable parse_csv(const std::string& text);
std::string to_csv(const CsvTable& table);
void write_csv(const std::filesystem::path& path, const CsvTable& table);

}  // namespace convpred
