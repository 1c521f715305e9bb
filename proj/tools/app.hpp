#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "samba/foundation.hpp"
#include "samba/localizer.hpp"
#include "samba/phantom.hpp"
#include "samba/pipeline.hpp"
#include "samba/promptnet.hpp"
#include "samba/training.hpp"
#include "samba/voting.hpp"

namespace samba::app {

namespace fs = std::filesystem;

enum class Mode { binary, multiclass };
enum class Fusion { none, votenet, majority };
/// foundation evaluates the pretrained model without fine-tuning.
enum class ModelKind { samba, foundation };

std::string_view mode_name(Mode m);
std::string_view fusion_name(Fusion f);
std::string_view model_kind_name(ModelKind k);

struct Condition {
    std::string name;  // empty: derived from the fields
    ModelKind model = ModelKind::samba;
    Mode mode = Mode::binary;
    PromptSource source = PromptSource::truth_box;
    Fusion fusion = Fusion::none;

    std::string label() const;
    /// File-name stem, e.g. "binary_truth_box_none".
    std::string slug() const;
};

struct Experiment {
    struct {
        int n = 24;
        std::uint64_t seed = 0;
        PhantomConfig phantom;
        QualityProfile quality;
    } dataset;
    FoundationConfig foundation;
    struct {
        TrainConfig train = TrainConfig::localizer_defaults();
        LocalizerConfig model;
        Modality modality = Modality::flair;
        double conf_threshold = 0.5;
    } localizer;
    struct {
        Mode mode = Mode::binary;
        PromptSource source = PromptSource::truth_box;
        std::vector<Modality> modalities{kAllModalities.begin(), kAllModalities.end()};
        TrainConfig binary = TrainConfig::binary_defaults();
        TrainConfig multiclass = TrainConfig::multiclass_defaults();
        PromptNetConfig model;
    } samba;
    struct {
        bool enabled = true;
        MaskSource mask_source = MaskSource::samba;
        double flip_probability = 0.1;
        std::vector<Modality> modalities = default_vote_modalities();
        std::vector<ViewAxis> views{ViewAxis::axial};
        TrainConfig train = TrainConfig::voting_defaults();
        std::array<int, 3> widths{12, 24, 48};
        Shape3 crop{16, 32, 32};
        int crops_per_case = 2;
        double tumor_bias = 0.7;
    } voting;
    struct {
        std::vector<Condition> conditions;  // empty: the samba mode and source, no fusion
        std::vector<Modality> binary_modalities;  // empty: samba.modalities
        int sensitivity_slices = 8;
        int overlays = 1;
    } eval;
    fs::path workdir = "runs/default";

    /// Effective configuration with every default filled in.
    nlohmann::json to_json() const;
    /// FNV-1a (hex) over the compact dump of to_json().
    std::string hash() const;
    /// Hash of the dataset section alone; recorded in the data manifest.
    std::string dataset_hash() const;
};

std::string hex64(std::uint64_t v);

/// Replaces dataset, foundation, localizer, samba and voting seeds.
void apply_seed(Experiment& e, std::uint64_t seed);

/// Strict parse: unknown keys and wrong types raise ConfigError.
Experiment parse_experiment(const nlohmann::json& j);

struct Overrides {
    std::optional<fs::path> workdir;
    std::optional<std::uint64_t> seed;
};

Experiment load_experiment(const fs::path& config, const Overrides& o = {});

struct Options {
    bool force = false;
    std::ostream* log = nullptr;  // null: std::cout
};

void cmd_gen(const Experiment& e, const Options& o);
/// stage: foundation | localizer | samba | voting
void cmd_train(const Experiment& e, const std::string& stage, const Options& o);
void cmd_eval(const Experiment& e, const Options& o);
void cmd_sensitivity(const Experiment& e, const Options& o);
void cmd_report(const Experiment& e, const Options& o);

// Workdir layout.
fs::path data_dir(const Experiment& e);
fs::path checkpoint_dir(const Experiment& e, const std::string& name);
std::string samba_checkpoint_name(Mode m, PromptSource s);
std::string votenet_checkpoint_name(const Experiment& e, Mode m, PromptSource s);
fs::path eval_dir(const Experiment& e);

/// Loads the generated dataset; MissingArtifactError names the missing manifest or volume.
Dataset load_dataset(const Experiment& e);

/// Parses argv and dispatches; returns the process exit code
/// (0 ok, 2 config, 3 missing artifact, 4 data, 5 internal).
int run_cli(int argc, char** argv);

}  // namespace samba::app
