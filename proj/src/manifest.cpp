#include "sieve/manifest.hpp"

#include <fstream>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "sieve/hash.hpp"
#include "sieve/io.hpp"

namespace sieve {

using json = nlohmann::ordered_json;

namespace {

std::string kind_label(ManifestError::Kind kind) {
  switch (kind) {
    case ManifestError::Kind::kMalformedRow: return "MalformedRow";
    case ManifestError::Kind::kDuplicateId: return "DuplicateId";
    case ManifestError::Kind::kEmptyField: return "EmptyField";
    case ManifestError::Kind::kInvalidUtf8: return "InvalidUtf8";
    case ManifestError::Kind::kIo: return "Io";
  }
  return "ManifestError";
}

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    if (tab == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

class RecordBuilder {
 public:
  explicit RecordBuilder(const ParseOptions& options) : options_(options) {}

  void add(std::size_t line_no, std::optional<std::string_view> raw_id, std::string image_ref,
           std::string caption, std::optional<std::string> source) {
    if (image_ref.empty()) {
      throw ManifestError(ManifestError::Kind::kEmptyField, line_no, "image_ref is empty");
    }
    if (trim(caption).empty()) {
      throw ManifestError(ManifestError::Kind::kEmptyField, line_no, "caption is empty");
    }
    PairRecord rec;
    if (raw_id) {
      std::uint64_t value = 0;
      if (!parse_hex16(*raw_id, value)) {
        throw ManifestError(ManifestError::Kind::kMalformedRow, line_no,
                            "invalid id '" + std::string(*raw_id) + "'");
      }
      rec.id = hex16(value);
    } else {
      rec.id = derive_pair_id(image_ref, caption);
    }
    rec.image_ref = std::move(image_ref);
    rec.caption = std::move(caption);
    rec.source = source ? std::move(*source) : options_.default_source;
    if (!seen_.emplace(rec.id, line_no).second) {
      throw ManifestError(ManifestError::Kind::kDuplicateId, line_no, rec.id);
    }
    m_.records.push_back(std::move(rec));
  }

  Manifest take() { return std::move(m_); }

 private:
  const ParseOptions& options_;
  Manifest m_;
  std::unordered_map<std::string, std::size_t> seen_;
};

void parse_jsonl_row(RecordBuilder& builder, std::size_t line_no, std::string_view line) {
  json row;
  try {
    row = json::parse(line);
  } catch (const json::exception& e) {
    throw ManifestError(ManifestError::Kind::kMalformedRow, line_no, e.what());
  }
  if (!row.is_object()) {
    throw ManifestError(ManifestError::Kind::kMalformedRow, line_no, "row is not a JSON object");
  }
  auto string_member = [&](const char* key, bool required) -> std::optional<std::string> {
    auto it = row.find(key);
    if (it == row.end() || it->is_null()) {
      if (required) {
        throw ManifestError(ManifestError::Kind::kMalformedRow, line_no,
                            std::string("missing key '") + key + "'");
      }
      return std::nullopt;
    }
    if (!it->is_string()) {
      throw ManifestError(ManifestError::Kind::kMalformedRow, line_no,
                          std::string("key '") + key + "' is not a string");
    }
    return it->get<std::string>();
  };
  auto id = string_member("id", false);
  auto image_ref = string_member("image_ref", true);
  auto caption = string_member("caption", true);
  auto source = string_member("source", false);
  builder.add(line_no, id ? std::optional<std::string_view>(*id) : std::nullopt, std::move(*image_ref),
              std::move(*caption), std::move(source));
}

}  // namespace

ManifestError::ManifestError(Kind kind, std::size_t line_no, std::string detail)
    : std::runtime_error(kind_label(kind) + (line_no ? " at line " + std::to_string(line_no) : "") +
                         ": " + detail),
      kind_(kind),
      line_no_(line_no),
      detail_(std::move(detail)) {}

std::string derive_pair_id(std::string_view image_ref, std::string_view caption) {
  std::string joined;
  joined.reserve(image_ref.size() + caption.size() + 1);
  joined.append(image_ref).push_back('\n');
  joined.append(caption);
  return hex16(fnv1a64(joined));
}

PairRecord make_pair_record(std::string image_ref, std::string caption, std::string source) {
  PairRecord rec;
  rec.id = derive_pair_id(image_ref, caption);
  rec.image_ref = std::move(image_ref);
  rec.caption = std::move(caption);
  rec.source = std::move(source);
  return rec;
}

const PairRecord* Manifest::find(std::string_view id) const {
  for (const auto& r : records) {
    if (r.id == id) return &r;
  }
  return nullptr;
}

std::string_view to_string(ManifestFormat format) noexcept {
  switch (format) {
    case ManifestFormat::kTsv2: return "tsv2";
    case ManifestFormat::kTsv3: return "tsv3";
    case ManifestFormat::kJsonl: return "jsonl";
  }
  return "?";
}

std::optional<ManifestFormat> manifest_format_from_string(std::string_view name) noexcept {
  if (name == "tsv2") return ManifestFormat::kTsv2;
  if (name == "tsv3") return ManifestFormat::kTsv3;
  if (name == "jsonl") return ManifestFormat::kJsonl;
  return std::nullopt;
}

bool is_valid_utf8(std::string_view text) noexcept {
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    const auto c = static_cast<unsigned char>(text[i]);
    std::size_t len;
    std::uint32_t cp;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      len = 2;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + len > n) return false;
    for (std::size_t k = 1; k < len; ++k) {
      const auto cc = static_cast<unsigned char>(text[i + k]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    // overlong forms, surrogates, out of range
    if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000) ||
        cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
      return false;
    }
    i += len;
  }
  return true;
}

std::string escape_tsv_field(std::string_view field) {
  std::string out;
  out.reserve(field.size());
  for (char c : field) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '\t': out += "\\t"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

std::string unescape_tsv_field(std::string_view field) {
  std::string out;
  out.reserve(field.size());
  for (std::size_t i = 0; i < field.size(); ++i) {
    const char c = field[i];
    if (c != '\\' || i + 1 == field.size()) {
      out.push_back(c);
      continue;
    }
    const char next = field[i + 1];
    switch (next) {
      case '\\': out.push_back('\\'); break;
      case 't': out.push_back('\t'); break;
      case 'n': out.push_back('\n'); break;
      case 'r': out.push_back('\r'); break;
      default:
        // unknown escapes are kept verbatim
        out.push_back('\\');
        out.push_back(next);
    }
    ++i;
  }
  return out;
}

Manifest parse_manifest(std::istream& in, ManifestFormat format, const ParseOptions& options) {
  RecordBuilder builder(options);
  std::string line;
  std::size_t line_no = 0;
  bool at_head = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!is_valid_utf8(line)) {
      throw ManifestError(ManifestError::Kind::kInvalidUtf8, line_no, "line is not valid UTF-8");
    }
    if (trim(line).empty()) continue;
    if (format == ManifestFormat::kJsonl) {
      parse_jsonl_row(builder, line_no, line);
      continue;
    }
    if (at_head && line.starts_with("# corpus-sieve")) continue;
    at_head = false;
    const auto fields = split_tabs(line);
    const std::size_t expected = format == ManifestFormat::kTsv2 ? 2 : 3;
    if (fields.size() != expected) {
      throw ManifestError(ManifestError::Kind::kMalformedRow, line_no,
                          "expected " + std::to_string(expected) + " columns, got " +
                              std::to_string(fields.size()));
    }
    if (format == ManifestFormat::kTsv2) {
      builder.add(line_no, std::nullopt, unescape_tsv_field(fields[0]), unescape_tsv_field(fields[1]),
                  std::nullopt);
    } else {
      builder.add(line_no, fields[0], unescape_tsv_field(fields[1]), unescape_tsv_field(fields[2]),
                  std::nullopt);
    }
  }
  if (in.bad()) throw ManifestError(ManifestError::Kind::kIo, line_no, "read failure");
  return builder.take();
}

Manifest parse_manifest(std::string_view text, ManifestFormat format, const ParseOptions& options) {
  std::istringstream in{std::string(text)};
  return parse_manifest(in, format, options);
}

ManifestFormat infer_manifest_format(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".jsonl") return ManifestFormat::kJsonl;
  if (ext == ".tsv2") return ManifestFormat::kTsv2;
  if (ext == ".tsv3") return ManifestFormat::kTsv3;
  if (ext != ".tsv") {
    throw ManifestError(ManifestError::Kind::kIo, 0,
                        "cannot infer manifest format from extension of " + path.string());
  }
  std::ifstream in(path);
  if (!in) throw ManifestError(ManifestError::Kind::kIo, 0, "cannot open " + path.string());
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty() || line.starts_with("# corpus-sieve")) continue;
    return split_tabs(line).size() == 3 ? ManifestFormat::kTsv3 : ManifestFormat::kTsv2;
  }
  return ManifestFormat::kTsv3;
}

Manifest read_manifest_file(const std::filesystem::path& path, std::optional<ManifestFormat> format,
                            const ParseOptions& options) {
  const ManifestFormat fmt = format ? *format : infer_manifest_format(path);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ManifestError(ManifestError::Kind::kIo, 0, "cannot open " + path.string());
  return parse_manifest(in, fmt, options);
}

void write_manifest(std::ostream& out, const Manifest& m, ManifestFormat format,
                    const WriteOptions& options) {
  if (options.header && format != ManifestFormat::kJsonl) out << kManifestHeaderLine << '\n';
  for (const auto& r : m.records) {
    switch (format) {
      case ManifestFormat::kTsv2:
        out << escape_tsv_field(r.image_ref) << '\t' << escape_tsv_field(r.caption) << '\n';
        break;
      case ManifestFormat::kTsv3:
        out << r.id << '\t' << escape_tsv_field(r.image_ref) << '\t' << escape_tsv_field(r.caption)
            << '\n';
        break;
      case ManifestFormat::kJsonl: {
        json row{{"id", r.id}, {"image_ref", r.image_ref}, {"caption", r.caption}};
        if (!r.source.empty()) row["source"] = r.source;
        try {
          out << row.dump() << '\n';
        } catch (const json::exception& e) {
          throw ManifestError(ManifestError::Kind::kInvalidUtf8, 0, r.id + ": " + e.what());
        }
        break;
      }
    }
  }
}

std::string write_manifest(const Manifest& m, ManifestFormat format, const WriteOptions& options) {
  std::ostringstream out;
  write_manifest(out, m, format, options);
  return out.str();
}

void write_manifest_file(const std::filesystem::path& path, const Manifest& m, ManifestFormat format,
                         const WriteOptions& options) {
  write_file_atomic(path, write_manifest(m, format, options));
}

Manifest dedupe(const Manifest& m, const std::unordered_set<std::string>& exclude) {
  Manifest out;
  out.format_version = m.format_version;
  std::unordered_set<std::string> seen;
  for (const auto& r : m.records) {
    if (exclude.contains(r.id)) continue;
    if (!seen.insert(r.id).second) continue;
    out.records.push_back(r);
  }
  return out;
}

}  // namespace sieve
