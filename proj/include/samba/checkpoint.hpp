#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "samba/localizer.hpp"
#include "samba/promptnet.hpp"
#include "samba/voting.hpp"

namespace samba {

// A checkpoint is a directory holding manifest.json plus one raw little-endian float32 file per
// parameter tensor, named "<collection>.<param>.f32". The manifest records the model kind, its
// configuration, per-collection frozen flags and digests, tensor shapes, and free-form metadata.

inline constexpr int kCheckpointVersion = 1;

nlohmann::json config_to_json(const PromptNetConfig& c);
nlohmann::json config_to_json(const LocalizerConfig& c);
nlohmann::json config_to_json(const VoteNetConfig& c);
PromptNetConfig promptnet_config_from_json(const nlohmann::json& j);
LocalizerConfig localizer_config_from_json(const nlohmann::json& j);
VoteNetConfig votenet_config_from_json(const nlohmann::json& j);

void save_checkpoint(const std::filesystem::path& dir, const PromptModel<float>& m, const nlohmann::json& metadata = {});
void save_checkpoint(const std::filesystem::path& dir, const Localizer<float>& m, const nlohmann::json& metadata = {});
void save_checkpoint(const std::filesystem::path& dir, const VoteNet<float>& m, const nlohmann::json& metadata = {});

// Loaders throw MissingArtifactError when the directory or a payload is absent and FormatError
// on version, kind, shape or payload-length mismatches.
PromptModel<float> load_promptnet(const std::filesystem::path& dir);
Localizer<float> load_localizer(const std::filesystem::path& dir);
VoteNet<float> load_votenet(const std::filesystem::path& dir);

nlohmann::json read_manifest(const std::filesystem::path& dir);
bool checkpoint_exists(const std::filesystem::path& dir);

/// Raw payload bytes of one collection's tensors, concatenated in declaration order.
std::string collection_payload(const std::filesystem::path& dir, const std::string& collection);

}  // namespace samba
