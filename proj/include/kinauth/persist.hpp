#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "kinauth/gmm.hpp"
#include "kinauth/models.hpp"

namespace kinauth {

// Model files: "kinauth-model-v1" tag, plain-text key=value header, then a
// "blob" line followed by every trainable parameter as little-endian f32 in
// declaration order (masked blocks excluded).
void save_model(const std::filesystem::path& path, const ModelGraph& model);
ModelGraph load_model(const std::filesystem::path& path);

// GMM-side artifacts share the same header+blob container under the
// "kinauth-gmm-v1" tag, distinguished by a `kind` key.
void save_gmm(const std::filesystem::path& path, const GmmParams& gmm);
GmmParams load_gmm(const std::filesystem::path& path);

void save_pca(const std::filesystem::path& path, const PcaModel& pca);
PcaModel load_pca(const std::filesystem::path& path);

void save_clients(const std::filesystem::path& path, const std::vector<ClientModel>& clients);
std::vector<ClientModel> load_clients(const std::filesystem::path& path);

// Persisted zt-norm side: t-models with their z-statistics and the scoring
// window; the z-sequences themselves stay in the corpus.
void save_ztnorm(const std::filesystem::path& path, const ZtNormParams& params);
ZtNormParams load_ztnorm(const std::filesystem::path& path);

}  // namespace kinauth
