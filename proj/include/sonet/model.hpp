#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sonet/autodiff.hpp"
#include "sonet/datasets.hpp"
#include "sonet/grouping.hpp"
#include "sonet/nn.hpp"
#include "sonet/pointcloud.hpp"
#include "sonet/random.hpp"
#include "sonet/som.hpp"

namespace sonet {

// All learnable state lives in one named-tensor map. Batch-norm running
// statistics are stored under ".running_mean"/".running_var" suffixes and
// are excluded from optimization.
struct ModelParams {
    std::map<std::string, Tensor> tensors;

    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;
    bool has(const std::string& name) const { return tensors.count(name) != 0; }
    static bool trainable(const std::string& name);
};

// Binds model parameters to tape leaves on demand and collects their
// gradients back out by name after backward().
class TapeCtx {
public:
    TapeCtx(ModelParams& params, Mode mode, std::uint64_t dropout_seed = 0)
        : params_(params), mode_(mode), dropout_rng_(dropout_seed) {}

    Tape& tape() { return tape_; }
    Mode mode() const { return mode_; }
    ModelParams& params() { return params_; }

    int param(const std::string& name);
    int bn(const std::string& layer, int x);  // layer-named batch norm
    std::uint64_t next_dropout_seed() { return dropout_rng_.raw(); }

    void backward(int root) { tape_.backward(root); }
    std::map<std::string, Tensor> collect_grads() const;

private:
    ModelParams& params_;
    Mode mode_;
    Tape tape_;
    RandomStream dropout_rng_;
    std::map<std::string, int> bound_;
};

struct EncoderConfig {
    std::size_t som_m = 8;
    std::size_t k = 3;
    std::size_t dims = 3;
    bool use_normals = false;
    std::vector<std::size_t> point_widths = {64, 64, 128};
    std::vector<std::size_t> node_widths = {256, 512};
    std::size_t global_dim = 512;
    bool hierarchical = false;
    std::size_t k_prime = 9;
    std::vector<std::size_t> hier_widths = {256};

    std::size_t input_width() const { return dims + (use_normals ? dims : 0); }
    std::size_t node_feat_width() const { return node_widths.back(); }
    void validate() const;
};

struct DecoderConfig {
    std::size_t code_dim = 256;
    std::size_t fc_points = 64;                       // N1
    std::vector<std::size_t> fc_widths = {256};
    std::size_t conv_h0 = 4, conv_w0 = 4;
    std::size_t conv_c0 = 64;
    std::vector<std::size_t> stage_channels = {32, 16};  // one entry per upconv stage
    std::size_t conv2pc_hidden = 32;

    std::size_t conv_points() const;  // N2 = final H*W
    void validate() const;
};

struct Checkpoint {
    std::uint32_t version = 1;
    std::map<std::string, Tensor> tensors;
    std::map<std::string, Tensor> opt_m;  // optimizer first moments
    std::map<std::string, Tensor> opt_v;  // optimizer second moments
    std::uint64_t step = 0;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Load checkpoint tensors into existing model parameters; every checkpoint
// name must exist with a matching shape.
void apply_checkpoint(const Checkpoint& ckpt, ModelParams& params);

// ---- encoder ----

struct EncodeOut {
    int global = -1;      // tape id, 1 x global_dim
    int node_feats = -1;  // tape id, M x node_feat_width
    int point_rows = -1;  // tape id, kN x input_width (normalized rows)
    Assignment assign;    // indices refer to the canonically sorted cloud
    std::vector<std::size_t> order;  // order[i] = input index of sorted point i
};

class Encoder {
public:
    Encoder() = default;
    Encoder(EncoderConfig cfg, std::string prefix) : cfg_(std::move(cfg)), prefix_(std::move(prefix)) {}
    const EncoderConfig& config() const { return cfg_; }
    void init(ModelParams& params, RandomStream& rng) const;
    EncodeOut forward(TapeCtx& ctx, const PointCloud& cloud, const SomGrid& som) const;

private:
    EncoderConfig cfg_;
    std::string prefix_;
};

// ---- decoder ----

struct DecodeOut {
    int final_cloud = -1;            // (N1+N2) x 3
    std::vector<int> coarse_clouds;  // intermediate H*W x 3 tape ids
};

class Decoder {
public:
    Decoder() = default;
    Decoder(DecoderConfig cfg, std::string prefix) : cfg_(std::move(cfg)), prefix_(std::move(prefix)) {}
    const DecoderConfig& config() const { return cfg_; }
    void init(ModelParams& params, RandomStream& rng) const;
    DecodeOut forward(TapeCtx& ctx, int code) const;

private:
    DecoderConfig cfg_;
    std::string prefix_;
};

// ---- task models ----

struct ClassifierConfig {
    EncoderConfig encoder;
    std::vector<std::size_t> mlp_widths = {256, 128};
    std::size_t num_classes = 4;
    double dropout_keep = 0.4;
};

class Classifier {
public:
    explicit Classifier(ClassifierConfig cfg, std::uint64_t init_seed = 1);
    const ClassifierConfig& config() const { return cfg_; }
    ModelParams& params() { return params_; }
    const ModelParams& params() const { return params_; }

    int logits(TapeCtx& ctx, const PointCloud& cloud, const SomGrid& som) const;  // 1 x K
    std::vector<double> scores(const PointCloud& cloud, const SomGrid& som) const;
    int predict(const PointCloud& cloud, const SomGrid& som) const;

private:
    ClassifierConfig cfg_;
    Encoder encoder_;
    ModelParams params_;
};

struct AutoencoderConfig {
    EncoderConfig encoder;
    DecoderConfig decoder;
};

class Autoencoder {
public:
    explicit Autoencoder(AutoencoderConfig cfg, std::uint64_t init_seed = 1);
    const AutoencoderConfig& config() const { return cfg_; }
    ModelParams& params() { return params_; }
    const ModelParams& params() const { return params_; }

    // Chamfer loss of final (and optionally coarse) reconstructions
    // against the input cloud.
    int loss(TapeCtx& ctx, const PointCloud& cloud, const SomGrid& som,
             bool coarse_supervision, DecodeOut* out = nullptr) const;
    PointCloud reconstruct(const PointCloud& cloud, const SomGrid& som) const;

private:
    AutoencoderConfig cfg_;
    Encoder encoder_;
    Decoder decoder_;
    ModelParams params_;
};

struct SegmenterConfig {
    EncoderConfig encoder;
    std::vector<std::size_t> pre_widths = {256, 128};   // on kN fused rows
    std::vector<std::size_t> post_widths = {128};       // after middle fusion
    std::size_t num_parts = 3;
};

class Segmenter {
public:
    explicit Segmenter(SegmenterConfig cfg, std::uint64_t init_seed = 1);
    const SegmenterConfig& config() const { return cfg_; }
    ModelParams& params() { return params_; }
    const ModelParams& params() const { return params_; }

    int scores(TapeCtx& ctx, const PointCloud& cloud, const SomGrid& som) const;  // N x K_parts
    std::vector<int> predict(const PointCloud& cloud, const SomGrid& som) const;

private:
    SegmenterConfig cfg_;
    Encoder encoder_;
    ModelParams params_;
};

// Rank library entries by L2 distance of score vectors, restricted to
// candidates whose argmax class matches the query's.
struct RetrievalHit {
    std::size_t index;
    double distance;
};
std::vector<RetrievalHit> retrieve(const std::vector<double>& query_scores,
                                   const std::vector<std::vector<double>>& library_scores);

}  // namespace sonet
