#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hbeo/beo.hpp"
#include "hbeo/net.hpp"
#include "hbeo/subspace.hpp"

namespace hbeo {

/// Everything inference needs: the shared basis, per-class subspaces and
/// mixtures, and (once trained) the joint network.
struct HbeoModel {
  std::vector<std::string> class_names;
  int resolution = 0;
  SharedBasis basis;
  std::vector<ClassSubspace> subspaces;
  std::vector<ClassGMM> gmms;  // empty until fitted
  std::optional<JointNetwork> network;

  /// Rounds every tensor to float32 so in-memory results match a reloaded model.
  void round_to_storage_precision();
  void validate() const;
};

// "HBEO" container, little-endian: magic, u16 version, u32 d, k, r, m, class
// names (u32 length + UTF-8), then sections. Matrices are float32 row-major;
// scalar parameters (weights, variances, floors) are float64. A CRC32 of all
// preceding bytes closes the file.
constexpr std::uint16_t kModelVersion = 1;

std::vector<std::uint8_t> encode_model(const HbeoModel& model);
/// Throws ChecksumError, FormatError (magic, version, truncation) or Error
/// (basis not orthonormal).
HbeoModel decode_model(std::span<const std::uint8_t> bytes);
void save_model(const std::string& path, const HbeoModel& model);
HbeoModel load_model(const std::string& path);

}  // namespace hbeo
