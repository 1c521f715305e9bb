#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "samba/localizer.hpp"
#include "samba/metrics.hpp"
#include "samba/phantom.hpp"
#include "samba/pipeline.hpp"
#include "samba/promptnet.hpp"
#include "samba/voting.hpp"

namespace samba {

/// Adam (0.9, 0.999, 1e-8) with gradients averaged over each batch.
struct TrainConfig {
    int epochs = 15;
    double learning_rate = 1e-3;
    int batch_size = 8;
    std::uint64_t seed = 0;

    static TrainConfig binary_defaults() { return {15, 1e-3, 8, 0}; }
    static TrainConfig multiclass_defaults() { return {50, 1e-3, 8, 0}; }
    static TrainConfig localizer_defaults() { return {150, 1e-3, 8, 0}; }
    static TrainConfig voting_defaults() { return {30, 1e-3, 2, 0}; }

    /// epochs >= 0 (0 is a no-op), learning_rate > 0, batch_size > 0; else ConfigError.
    void validate() const;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    std::size_t samples = 0;
    std::map<std::string, double> val;
    double seconds = 0.0;
};

struct TrainHistory {
    std::string procedure;
    std::map<std::string, double> initial_val;
    std::vector<EpochRecord> epochs;
    std::map<std::string, std::string> digests;  // collection name -> hex FNV-1a

    /// One JSON object per epoch (wall-clock excluded so reruns compare byte-for-byte),
    /// preceded by an epoch-0 record holding initial_val and followed by a digest record.
    std::string to_jsonl() const;
    std::string timing_jsonl() const;
};

// Decoder fine-tuning.

struct DecoderTrainOptions {
    PromptSource source = PromptSource::truth_box;
    std::vector<Modality> modalities{kAllModalities.begin(), kAllModalities.end()};
    const Localizer<float>* localizer = nullptr;
    double conf_threshold = 0.5;
    /// Permits training with a trainable encoder or prompt encoder. Off by default.
    bool allow_unfrozen_encoder = false;
    bool validate = true;
};

/// Trains the decoder on every axial slice of the configured modalities. truth_box skips slices
/// without tumor; full_brain_box uses every slice; localizer uses every slice with a detection,
/// tumor-free detections becoming empty-mask negatives. Validation reports volume Dice averaged
/// over val cases and modalities (WT for binary heads; ET, TC, WT and mean for multi-class).
/// Throws ConfigError unless encoder and prompt are frozen (or the override is set).
TrainHistory train_decoder(PromptModel<float>& m, const Dataset& data, const DecoderTrainOptions& opt,
                           const TrainConfig& cfg);

/// Validation scores used by train_decoder, computed without training.
std::map<std::string, double> decoder_val_metrics(const PromptModel<float>& m, const std::vector<Case>& cases,
                                                  const DecoderTrainOptions& opt);

// Localizer.

struct LocalizerTrainOptions {
    Modality modality = Modality::flair;
    double conf_threshold = 0.5;
    bool validate = true;
};

/// Objectness BCE over all cells plus objectness and box loss at the cell holding the WT-box
/// center, on every axial slice. Validation reports accuracy, mean_confidence and mean_box_loss.
TrainHistory train_localizer(Localizer<float>& m, const Dataset& data, const LocalizerTrainOptions& opt,
                             const TrainConfig& cfg);

LocalizationMetrics localizer_val_metrics(const Localizer<float>& m, const std::vector<Case>& cases,
                                          const LocalizerTrainOptions& opt);

// Voting network.

enum class MaskSource { truth_noisy, samba };
std::string_view mask_source_name(MaskSource s);
MaskSource parse_mask_source(std::string_view name);

struct VotingTrainOptions {
    MaskSource source = MaskSource::truth_noisy;
    double flip_probability = 0.1;
    /// SAMBA probability volumes per case when source == samba, aligned with the dataset splits.
    const std::vector<VoteInput>* train_votes = nullptr;
    const std::vector<VoteInput>* val_votes = nullptr;
    std::vector<Modality> modalities = default_vote_modalities();
    std::vector<ViewAxis> views{ViewAxis::axial};
    Shape3 crop{16, 32, 32};
    int crops_per_case = 2;
    /// Probability that a crop is centered on a random tumor voxel.
    double tumor_bias = 0.7;
    bool validate = true;
};

/// WT mask replicated per channel with independent voxel flips of probability p.
VoteInput noisy_truth_votes(const Case& c, const std::vector<Modality>& modalities, const std::vector<ViewAxis>& views,
                            double p, std::uint64_t seed);

/// Random crops, 4-way voxel cross-entropy. Validation runs on full val volumes and reports
/// votenet WT Dice ("wt"), majority-vote WT Dice ("majority_wt") and the composites.
/// Throws ConfigError when the vote channel count differs from the network's input channels.
TrainHistory train_voting(VoteNet<float>& net, const Dataset& data, const VotingTrainOptions& opt,
                          const TrainConfig& cfg);

std::map<std::string, double> voting_val_metrics(const VoteNet<float>& net, const std::vector<Case>& cases,
                                                 const std::vector<VoteInput>& votes);

}  // namespace samba
