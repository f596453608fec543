#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace sieve {

/// One image reference plus its caption. The image is never fetched here;
/// image_ref is an opaque URL or path.
struct PairRecord {
  std::string id;
  std::string image_ref;
  std::string caption;
  std::string source;

  friend bool operator==(const PairRecord&, const PairRecord&) = default;
};

/// Lowercase hex of FNV-1a-64 over `image_ref + "\n" + caption`.
std::string derive_pair_id(std::string_view image_ref, std::string_view caption);

/// Builds a record with a derived id.
PairRecord make_pair_record(std::string image_ref, std::string caption, std::string source = {});

inline constexpr std::string_view kManifestFormatVersion = "1";
inline constexpr std::string_view kManifestHeaderLine = "# corpus-sieve v1";

struct Manifest {
  std::vector<PairRecord> records;
  std::string format_version{kManifestFormatVersion};

  std::size_t size() const noexcept { return records.size(); }
  bool empty() const noexcept { return records.empty(); }
  const PairRecord* find(std::string_view id) const;

  friend bool operator==(const Manifest&, const Manifest&) = default;
};

enum class ManifestFormat { kTsv2, kTsv3, kJsonl };

std::string_view to_string(ManifestFormat format) noexcept;
std::optional<ManifestFormat> manifest_format_from_string(std::string_view name) noexcept;

class ManifestError : public std::runtime_error {
 public:
  enum class Kind { kMalformedRow, kDuplicateId, kEmptyField, kInvalidUtf8, kIo };

  ManifestError(Kind kind, std::size_t line_no, std::string detail);

  Kind kind() const noexcept { return kind_; }
  /// 1-based; 0 when not tied to a line.
  std::size_t line_no() const noexcept { return line_no_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  Kind kind_;
  std::size_t line_no_;
  std::string detail_;
};

struct ParseOptions {
  /// Applied to TSV rows (which have no source column) and JSONL rows without one.
  std::string default_source;
};

Manifest parse_manifest(std::istream& in, ManifestFormat format, const ParseOptions& options = {});
Manifest parse_manifest(std::string_view text, ManifestFormat format, const ParseOptions& options = {});

/// Infers the format from the extension: .jsonl, .tsv2, .tsv3, or .tsv
/// (column count of the first data row decides between tsv2 and tsv3).
ManifestFormat infer_manifest_format(const std::filesystem::path& path);
Manifest read_manifest_file(const std::filesystem::path& path,
                            std::optional<ManifestFormat> format = std::nullopt,
                            const ParseOptions& options = {});

struct WriteOptions {
  /// Emit the `# corpus-sieve v1` head line (TSV formats only).
  bool header = false;
};

void write_manifest(std::ostream& out, const Manifest& m, ManifestFormat format,
                    const WriteOptions& options = {});
std::string write_manifest(const Manifest& m, ManifestFormat format, const WriteOptions& options = {});
void write_manifest_file(const std::filesystem::path& path, const Manifest& m, ManifestFormat format,
                         const WriteOptions& options = {});

/// Keeps the first occurrence of each id and drops ids in `exclude`.
Manifest dedupe(const Manifest& m, const std::unordered_set<std::string>& exclude = {});

// TSV field escaping: backslash, TAB, LF and CR become \\ \t \n \r.
std::string escape_tsv_field(std::string_view field);
std::string unescape_tsv_field(std::string_view field);

bool is_valid_utf8(std::string_view text) noexcept;

}  // namespace sieve
