#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sonet/model.hpp"

namespace sonet {

struct EpochLog {
    std::size_t epoch;
    double lr;
    double train_loss;
    double eval_metric;
};

struct TrainConfig {
    std::size_t epochs = 20;
    std::size_t batch_size = 8;
    LrSchedule schedule;
    AugmentParams augment;
    bool augment_enabled = true;
    std::uint64_t seed = 1;
    bool coarse_supervision = true;  // autoencoder only
};

void write_metric_csv(const std::string& path, const std::vector<EpochLog>& log);

// One SOM per cloud with the fixed shared initialization.
std::vector<SomGrid> train_soms(const Dataset& ds, std::size_t m,
                                const SomTrainConfig& cfg = {},
                                const PotentialInitConfig& init_cfg = {});

struct FitResult {
    Checkpoint checkpoint;
    std::vector<EpochLog> log;
};

// Mini-batch Adam training. The eval split may be empty, in which case the
// eval metric column is reported on the training split.
FitResult fit_classifier(Classifier& model, const Dataset& train, const std::vector<SomGrid>& soms,
                         const Dataset& eval, const std::vector<SomGrid>& eval_soms,
                         const TrainConfig& cfg, const Checkpoint* warm_start = nullptr);

FitResult fit_autoencoder(Autoencoder& model, const Dataset& train,
                          const std::vector<SomGrid>& soms, const Dataset& eval,
                          const std::vector<SomGrid>& eval_soms, const TrainConfig& cfg,
                          const Checkpoint* warm_start = nullptr);

FitResult fit_segmenter(Segmenter& model, const Dataset& train, const std::vector<SomGrid>& soms,
                        const Dataset& eval, const std::vector<SomGrid>& eval_soms,
                        const TrainConfig& cfg, const Checkpoint* warm_start = nullptr);

double eval_classifier(const Classifier& model, const Dataset& ds,
                       const std::vector<SomGrid>& soms);
double eval_autoencoder_chamfer(const Autoencoder& model, const Dataset& ds,
                                const std::vector<SomGrid>& soms);
double eval_segmenter_miou(const Segmenter& model, const Dataset& ds,
                           const std::vector<SomGrid>& soms);

}  // namespace sonet
