// SPDX-License-Identifier: Apache-2.0

#include "ptk/document.hpp"

#include "ptk/error.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <fstream>
#include <sstream>

namespace ptk {

using nlohmann::json;

bool is_known_language(std::string_view lang) noexcept {
    static constexpr std::array<std::string_view, 7> known{"code", "eng", "fin", "lat", "sme", "swe", "xling"};
    for (const auto k : known) {
        if (k == lang) {
            return true;
        }
    }
    return false;
}

std::uint64_t whitespace_token_count(std::string_view text) noexcept {
    std::uint64_t n = 0;
    bool in_word = false;
    for (const char c : text) {
        const bool ws = c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
        if (!ws && !in_word) {
            ++n;
        }
        in_word = !ws;
    }
    return n;
}

std::vector<Document> read_jsonl(std::istream& in) {
    std::vector<Document> docs;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        const auto where = [&] { return "corpus line " + std::to_string(lineno) + ": "; };
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw InputError(where() + e.what());
        }
        if (!j.is_object()) {
            throw InputError(where() + "record is not an object");
        }
        Document d;
        try {
            d.id = j.at("id").get<std::string>();
            d.lang = j.at("lang").get<std::string>();
            d.text = j.at("text").get<std::string>();
            d.source = j.value("source", std::string{});
            if (const auto it = j.find("token_count"); it != j.end() && !it->is_null()) {
                d.token_count = it->get<std::uint64_t>();
            } else {
                d.token_count = whitespace_token_count(d.text);
            }
            if (const auto it = j.find("edu_score"); it != j.end() && !it->is_null()) {
                d.edu_score = it->get<double>();
            }
        } catch (const json::exception& e) {
            throw InputError(where() + e.what());
        }
        if (!is_known_language(d.lang)) {
            throw InputError(where() + "unknown language tag '" + d.lang + "'");
        }
        docs.push_back(std::move(d));
    }
    return docs;
}

std::vector<Document> read_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    return read_jsonl(in);
}

std::string to_json_line(const Document& d) {
    json j;
    j["id"] = d.id;
    j["lang"] = d.lang;
    j["text"] = d.text;
    j["source"] = d.source;
    j["token_count"] = d.token_count;
    if (d.edu_score) {
        j["edu_score"] = *d.edu_score;
    }
    return j.dump(-1, ' ', false, json::error_handler_t::replace);
}

void write_jsonl(std::ostream& out, const std::vector<Document>& docs) {
    for (const auto& d : docs) {
        out << to_json_line(d) << '\n';
    }
}

void write_jsonl(const std::filesystem::path& path, const std::vector<Document>& docs) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    write_jsonl(out, docs);
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace ptk
