// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ptk {

/// One corpus record. token_count is measured under the corpus' designated
/// tokenizer; when a file omits it, readers fill in the whitespace word count.
struct Document {
    std::string id;
    std::string lang;
    std::string text;
    std::uint64_t token_count = 0;
    std::optional<double> edu_score;
    std::string source;

    bool operator==(const Document&) const = default;
};

/// Language tags that may appear in a corpus: ISO 639-3 codes of the
/// pretraining languages plus "code" and "xling".
bool is_known_language(std::string_view lang) noexcept;

/// Newline-delimited JSON objects with fields id, lang, text, source and
/// optionally token_count and edu_score. Throws InputError with the line
/// number on malformed records.
std::vector<Document> read_jsonl(std::istream& in);
std::vector<Document> read_jsonl(const std::filesystem::path& path);

void write_jsonl(std::ostream& out, const std::vector<Document>& docs);
void write_jsonl(const std::filesystem::path& path, const std::vector<Document>& docs);
std::string to_json_line(const Document& doc);

std::uint64_t whitespace_token_count(std::string_view text) noexcept;

/// Reads an entire file; throws IoError on failure.
std::string read_file(const std::filesystem::path& path);

}  // namespace ptk
