#pragma once

// Generator bundle (PSA language model + claim reconstructor) and its
// on-disk checkpoint.
//
// Layout of a checkpoint file:
//   8 bytes   magic "FGCKPT01"
//   uint32    format version
//   uint64    header length in bytes
//   header    UTF-8 JSON: kind, configs, global step, tensor table
//   payload   tensors as little-endian float64, column-major, in table order

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "factgen/claim_reconstructor.hpp"
#include "factgen/parameters.hpp"
#include "factgen/psa_lm.hpp"
#include "json.hpp"

namespace factgen {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Named tensors plus a JSON header.
struct TensorArchive {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Matrix>> tensors;

  void add(std::string name, Matrix m) { tensors.emplace_back(std::move(name), std::move(m)); }
  const Matrix* find(const std::string& name) const;

  void save(const std::filesystem::path& path) const;
  static TensorArchive load(const std::filesystem::path& path);
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const CRConfig& c);
void from_json(const nlohmann::json& j, CRConfig& c);

struct FactGenModel {
  PsaModel lm;
  ClaimReconstructor cr;
  std::uint64_t vocab_fingerprint = 0;

  static FactGenModel create(const ModelConfig& model, const CRConfig& cr, std::uint64_t seed,
                             std::uint64_t vocab_fingerprint = 0);

  std::vector<Parameter*> parameters();
  /// Decoder token table when the reconstructor shares it, else nullptr.
  Parameter* shared_tokens();
};

/// Copies every value of src into the same-named parameter of dst.
void load_parameters(ParameterSet& dst, const TensorArchive& src, const std::string& prefix = "");
void store_parameters(TensorArchive& dst, const ParameterSet& src, const std::string& prefix = "");

void save_checkpoint(const std::filesystem::path& path, FactGenModel& model, const Adam* optimizer,
                     long global_step);

struct LoadedCheckpoint {
  FactGenModel model;
  long global_step = 0;
  TensorArchive archive;  // retains optimizer moments for restore_optimizer
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Throws LoadError when the checkpoint was trained against another vocabulary.
void check_vocabulary(const FactGenModel& model, const Vocabulary& vocab);

/// Restores Adam moments and step counter saved by save_checkpoint.
void restore_optimizer(const TensorArchive& archive, Adam& optimizer);

}  // namespace factgen
