#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "dtrec/models.hpp"

namespace dtrec {

// Named parameter blocks ("f", "w", "g", ...) plus the hash of the config
// that produced them.
struct Checkpoint {
  std::string config_hash;
  std::map<std::string, ModelParams> models;
};

// Binary round-trip is bit-exact.
void save_checkpoint_binary(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint_binary(const std::filesystem::path& path);

// JSON keeps shapes and flat parameter arrays; doubles are written with
// round-trip precision.
void save_checkpoint_json(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint_json(const std::filesystem::path& path);

// Dispatches on extension: ".json" or binary otherwise.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dtrec
