#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ewe/data.hpp"
#include "ewe/rng.hpp"
#include "ewe/tensor.hpp"

namespace ewe {

enum class LayerKind : std::uint8_t {
    Dense = 0,
    Conv = 1,
    MaxPool2 = 2,
    Relu = 3,
    Sigmoid = 4,
    Dropout = 5,
    SoftmaxOutput = 6,
};

struct LayerDesc {
    LayerKind kind = LayerKind::Dense;
    int units = 0;    // dense output width
    int kernels = 0;  // conv filter count
    int ksize = 0;    // conv kernel side
    Padding pad = Padding::Same;
    float rate = 0.f;  // dropout
};

// Ordered layer descriptors plus the indices of layers whose outputs feed the
// entanglement loss. The terminal head is either a SoftmaxOutput marker after
// a width-K dense layer, or a Sigmoid after a width-1 dense layer (binary).
struct ModelSpec {
    Shape input_shape;  // {H,W} single-channel image or {features}
    std::vector<LayerDesc> layers;
    std::vector<int> snnl_layers;
    int num_classes = 0;

    bool binary_head() const;
    void validate() const;  // ContractError listing the first violation
    long param_count() const;
};

// Parses a compact architecture string, e.g.
//   "conv:32x5,relu,snnl,pool,drop:0.5,conv:64x3,relu,snnl,pool,drop:0.5,
//    dense:128,relu,snnl,drop:0.5,dense:10,softmax"
// The "snnl" token marks the previous layer's output for entanglement capture.
ModelSpec parse_model_spec(const std::string& arch, Shape input_shape, int num_classes);

// The 2-conv/2-dense architecture used for 28x28 digit tasks.
ModelSpec mnist_cnn_spec();

// Per-sample output shape after every layer: {C,H,W} while convolutional,
// {F} once flattened.
std::vector<Shape> layer_output_shapes(const ModelSpec& spec);

struct Model {
    ModelSpec spec;
    std::vector<Tensor> params;  // W,b per parametric layer, in layer order
    bool training = false;

    std::vector<Tensor> trainable() { return params; }
};

Model build_model(const ModelSpec& spec, std::uint64_t seed);

struct ForwardResult {
    Tensor logits;                    // (N,K), or (N,1) for the binary head
    std::vector<Tensor> snnl_acts;    // one (N,features) tensor per snnl layer
    std::vector<Tensor> hidden_acts;  // post-relu activations (capture_hidden only)
};

// Runs the network over a batch shaped like the spec input (leading N).
// dropout_rng must be supplied when model.training and a dropout layer exists.
ForwardResult forward_model(Tape* tape, const Model& m, const Tensor& batch,
                            Rng* dropout_rng = nullptr, bool capture_hidden = false);

std::vector<int> predict_labels(const Model& m, const Tensor& inputs);
double evaluate(const Model& m, const Dataset& ds);

// ---- container io ------------------------------------------------------------
// Layout: magic "EWEM", u32 version, u32 flags (bit0 model, bit1 watermark),
// then little-endian sections. Weights are raw IEEE-754 float32 arrays whose
// sizes derive from the spec block, so save->load->save is byte-identical.

inline constexpr char kContainerMagic[4] = {'E', 'W', 'E', 'M'};
inline constexpr std::uint32_t kContainerVersion = 1;
inline constexpr std::uint32_t kFlagModel = 1u;
inline constexpr std::uint32_t kFlagWatermark = 2u;

void save_model(const Model& m, const std::string& path);
Model load_model(const std::string& path);

namespace io_detail {
void write_header(std::ostream& os, std::uint32_t flags);
std::uint32_t read_header(std::istream& is, const std::string& path, std::uint64_t& off);
void write_model_section(std::ostream& os, const Model& m);
Model read_model_section(std::istream& is, const std::string& path, std::uint64_t& off);
}  // namespace io_detail

}  // namespace ewe
