#pragma once
// Minimal dense-network substrate: forward, explicit backward, losses and the
// SGD optimizer used by every learned component in the simulator.
//
// Models are plain value objects. A forward pass returns a Trace holding the
// activations needed for backward; traces are tied to the model version that
// produced them, so training steps invalidate outstanding traces.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "splitguard/linalg.hpp"
#include "splitguard/rng.hpp"

namespace splitguard::nn {

enum class Activation { relu, identity, sigmoid };

std::string activation_name(Activation a);
Activation activation_from_name(const std::string& name);

struct Layer {
    Matrix weights;            // [out × in], row-major
    std::vector<double> bias;  // [out]
    Activation activation = Activation::identity;
};

// Linear read-out head attached to the trunk output.
struct Head {
    Matrix weights;
    std::vector<double> bias;
};

class MlpModel {
public:
    std::vector<Layer> layers;
    std::map<std::string, Head> heads;

    std::size_t input_dim() const;
    std::size_t output_dim() const;  // trunk output width
    std::size_t head_dim(const std::string& name) const;
    bool has_head(const std::string& name) const { return heads.count(name) > 0; }

    std::uint64_t version() const { return version_; }
    void bump_version() { ++version_; }

    // Throws ShapeError if adjacent layers do not compose or a head does not
    // match the trunk output; throws DomainError on non-finite parameters.
    void validate() const;

private:
    std::uint64_t version_ = 0;
};

// Glorot-uniform weights (±sqrt(6/(fan_in+fan_out))), zero biases.
MlpModel make_mlp(const std::vector<std::size_t>& dims, const std::vector<Activation>& activations,
                  Rng& rng);
void add_head(MlpModel& model, const std::string& name, std::size_t out_dim, Rng& rng);

// Front-to-back layer concatenation; heads are taken from `back`.
MlpModel compose(const MlpModel& front, const MlpModel& back);

struct LayerCache {
    Matrix input;   // activation fed into the layer [B × in]
    Matrix preact;  // W·x + b before the nonlinearity [B × out]
};

struct Trace {
    std::uint64_t model_version = 0;
    std::vector<LayerCache> trunk;
    std::optional<std::string> head;
    Matrix head_input;  // trunk output when a head was evaluated
    Matrix output;      // model output (head logits, or trunk activation)
};

struct LayerGrad {
    Matrix weights;
    std::vector<double> bias;
};

struct GradientBundle {
    std::vector<LayerGrad> layers;
    std::map<std::string, LayerGrad> heads;
    Matrix input;  // d(loss)/d(batch input) — enables split training

    void add(const GradientBundle& other);
    void scale(double factor);
};

GradientBundle zero_grads(const MlpModel& model);

// Runs the trunk and, when `head` is given, that head. Throws ShapeError on a
// width mismatch and ContractError for an unknown head name.
Trace forward(const MlpModel& model, const Matrix& inputs,
              const std::optional<std::string>& head = std::nullopt);

// output_grad is d(loss)/d(output) with the same shape as trace.output.
// Throws ContractError if the model changed since the trace was taken.
GradientBundle backward(const MlpModel& model, const Trace& trace, const Matrix& output_grad);

// Row-wise numerically stable softmax.
Matrix softmax(const Matrix& logits);

struct CrossEntropy {
    double loss = 0.0;  // mean over the batch
    Matrix grad;        // (softmax − onehot)/B
};

CrossEntropy cross_entropy(const Matrix& logits, const std::vector<int>& labels);

// Per-sample negative log-likelihoods and the unscaled (softmax − onehot)
// rows; building block for the sum-form multi-task losses.
struct PerSampleCrossEntropy {
    std::vector<double> losses;
    Matrix grad;  // softmax − onehot, no 1/B
};

PerSampleCrossEntropy per_sample_cross_entropy(const Matrix& logits, const std::vector<int>& labels);

// velocity ← momentum·velocity + grads; params ← params − lr·velocity.
// `velocity` may be empty, in which case it is zero-initialized.
void sgd_step(MlpModel& model, const GradientBundle& grads, double lr, double momentum,
              GradientBundle& velocity);

// Rescales the bundle to global L2 norm ≤ max_norm; returns the pre-clip norm.
double clip_grad_norm(GradientBundle& grads, double max_norm);

std::size_t param_count(const MlpModel& model, bool include_heads = true);
std::vector<double> flatten_params(const MlpModel& model, bool include_heads = true);
void set_params(MlpModel& model, const std::vector<double>& flat, bool include_heads = true);
std::vector<double> flatten_trunk_grads(const GradientBundle& grads);

// Versioned textual checkpoint with hex-float values (bit-exact round trip).
std::string serialize_model(const MlpModel& model);
MlpModel parse_model(const std::string& text);
void save_model(const MlpModel& model, const std::string& path);
MlpModel load_model(const std::string& path);

}  // namespace splitguard::nn
