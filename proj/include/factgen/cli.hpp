#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace factgen::cli {

/// One configuration field. Sections mirror module names; the flag is the
/// kebab-case field name unless two sections share a field name.
struct Field {
  const char* section;
  const char* key;
  const char* flag;
  const char* default_value;
  const char* help;
  unsigned commands;  // bitmask over Command
  char type;          // s string, i integer, r real, b boolean, p path
};

enum Command : unsigned {
  kBuildIndex = 1u << 0,
  kRetrieve = 1u << 1,
  kTrain = 1u << 2,
  kGenerate = 1u << 3,
  kEvaluate = 1u << 4,
  kDefendTrain = 1u << 5,
  kDefendEval = 1u << 6,
  kAll = 0x7f,
};

const std::vector<Field>& fields();

/// Resolved key/value configuration ("section.key" -> text).
class RunConfig {
 public:
  RunConfig();  // defaults

  /// Merges an INI file; relative paths resolve against the file's directory.
  /// Unknown sections or keys are validation errors.
  void merge_file(const std::filesystem::path& path);
  void set(const std::string& name, const std::string& value);

  const std::string& str(const std::string& name) const;
  long integer(const std::string& name) const;
  double real(const std::string& name) const;
  bool boolean(const std::string& name) const;
  /// Empty when unset.
  std::filesystem::path path(const std::string& name) const;
  /// Throws ValidationError naming the field and its flag when empty.
  std::filesystem::path required_path(const std::string& name) const;

  /// Parses every typed field once so bad values surface before any work.
  void validate() const;

  void write(const std::filesystem::path& path, const std::string& command) const;

 private:
  std::map<std::string, std::string> values_;
};

/// Fixed file names inside the run directory.
namespace files {
inline constexpr const char* vocab = "vocab.txt";
inline constexpr const char* index = "index.json";
inline constexpr const char* facts = "facts.jsonl";
inline constexpr const char* trace_csv = "trace.csv";
inline constexpr const char* trace_json = "trace.json";
inline constexpr const char* checkpoints = "checkpoints";
inline constexpr const char* model = "model.ckpt";
inline constexpr const char* generations = "generations.jsonl";
inline constexpr const char* report = "report.json";
inline constexpr const char* defender = "defender.ckpt";
inline constexpr const char* defender_metrics = "defender.json";
inline constexpr const char* predictions = "preds.jsonl";
}  // namespace files

/// Runs one subcommand. Returns 0 on success, 1 on usage or validation
/// errors, 2 on runtime failures.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace factgen::cli
