#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "ganproj/tensor.hpp"

namespace ganproj {

enum class Mode { training, inference };

/// Height x width x channels of an image-shaped tensor (row-major, channel-interleaved).
struct ImageShape {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;

    std::size_t numel() const { return height * width * channels; }
    Shape hwc() const { return {height, width, channels}; }
    friend bool operator==(const ImageShape&, const ImageShape&) = default;
};

std::string to_string(const ImageShape& s);

namespace layers {

/// y = W x + b, weight is out x in.
struct Dense {
    Tensor weight;
    Tensor bias;
};

struct Reshape {
    Shape shape;
};

/// Per-channel normalization; channel is the first per-sample axis.
struct BatchNorm {
    Tensor gamma;
    Tensor beta;
    Tensor running_mean;
    Tensor running_var;
    double eps = 1e-5;
    /// running = momentum * running + (1 - momentum) * batch
    double momentum = 0.9;
};

struct Relu {};

struct LeakyRelu {
    double slope = 0.2;
};

/// weight is in_channels x out_channels x k x k.
struct ConvTranspose2d {
    Tensor weight;
    Tensor bias;
    int stride = 2;
    int pad = 1;
};

/// weight is out_channels x in_channels x k x k.
struct Conv2d {
    Tensor weight;
    Tensor bias;
    int stride = 2;
    int pad = 1;
};

struct Tanh {};

}  // namespace layers

using Layer = std::variant<layers::Dense, layers::Reshape, layers::BatchNorm, layers::Relu, layers::LeakyRelu,
                           layers::ConvTranspose2d, layers::Conv2d, layers::Tanh>;

/// Short lowercase kind name ("dense", "batch_norm", ...).
std::string layer_kind(const Layer& layer);

/// Batch mean and biased variance per channel, recorded by a training-mode pass.
struct BatchStats {
    std::vector<double> mean;
    std::vector<double> var;
    std::size_t count = 0;  // samples per channel (batch * spatial)
};

/// Activations recorded by Sequential::forward for the backward pass.
/// activations[0] is the input, activations[i + 1] the output of layer i.
struct ForwardTrace {
    std::vector<Tensor> activations;
    std::vector<BatchStats> batch_stats;
};

/// One gradient tensor per trainable parameter, ordered like Sequential::parameters().
struct ParamGrads {
    std::vector<Tensor> grads;

    void scale(double factor);
    void add(const ParamGrads& other);
    bool all_zero() const;
};

/// Ordered layer stack operating on batches shaped {N, per-sample...}.
class Sequential {
public:
    Sequential() = default;
    Sequential(Shape input_shape, std::vector<Layer> layers);

    const Shape& input_shape() const { return input_shape_; }
    const Shape& output_shape() const { return shapes_.empty() ? input_shape_ : shapes_.back(); }
    /// Per-sample shape produced by layer i.
    const Shape& layer_output_shape(std::size_t i) const { return shapes_.at(i); }
    const Shape& layer_input_shape(std::size_t i) const { return i == 0 ? input_shape_ : shapes_.at(i - 1); }
    std::size_t size() const { return layers_.size(); }
    const std::vector<Layer>& layers() const { return layers_; }
    Layer& layer(std::size_t i) { return layers_.at(i); }
    const Layer& layer(std::size_t i) const { return layers_.at(i); }

    Tensor forward(const Tensor& batch, Mode mode, ForwardTrace* trace = nullptr) const;

    /// Reverse-mode pass. Accumulates into *grads when non-null; returns the
    /// gradient with respect to the input when want_input_grad is set.
    Tensor backward(const ForwardTrace& trace, const Tensor& grad_output, Mode mode, ParamGrads* grads,
                    bool want_input_grad = true) const;

    std::vector<Tensor*> parameters();
    std::vector<const Tensor*> parameters() const;
    /// Names "<layer index>.<field>" aligned with parameters().
    std::vector<std::string> parameter_names() const;
    std::size_t parameter_count() const;

    /// Parameters plus batch-norm running statistics, in a fixed order.
    std::vector<std::pair<std::string, Tensor*>> state();
    std::vector<std::pair<std::string, const Tensor*>> state() const;

    ParamGrads zero_grads() const;

    /// Folds the batch statistics of a training-mode pass into the running statistics.
    void commit_batch_stats(const ForwardTrace& trace);

private:
    Shape input_shape_;
    std::vector<Layer> layers_;
    std::vector<Shape> shapes_;
};

/// The generator phi: latent vector -> image in [-1,1] (final tanh).
/// The body maps {N, d} to {N, C, H, W} (channel-major) or {N, H*W*C}.
class GeneratorNet {
public:
    GeneratorNet() = default;
    GeneratorNet(ImageShape image, Sequential body, Mode mode = Mode::inference);

    std::size_t input_dim() const { return body_.input_shape().at(0); }
    const ImageShape& image_shape() const { return image_; }
    Mode mode() const { return mode_; }
    void set_mode(Mode mode) { mode_ = mode; }
    Sequential& body() { return body_; }
    const Sequential& body() const { return body_; }
    bool channel_major() const { return body_.output_shape().size() == 3; }

private:
    ImageShape image_;
    Sequential body_;
    Mode mode_ = Mode::inference;
};

/// Binary classifier D: image -> logit. Body maps {N, C, H, W} to {N, 1}.
class DiscriminatorNet {
public:
    DiscriminatorNet() = default;
    DiscriminatorNet(ImageShape image, Sequential body);

    const ImageShape& image_shape() const { return image_; }
    Sequential& body() { return body_; }
    const Sequential& body() const { return body_; }

private:
    ImageShape image_;
    Sequential body_;
};

/// Batch layout conversion between {N, H, W, C} image order and {N, C, H, W}.
Tensor hwc_to_chw(const Tensor& batch);
Tensor chw_to_hwc(const Tensor& batch);

/// phi(z) as an H x W x C tensor. Evaluated in the network's current mode.
Tensor gen_forward(const GeneratorNet& net, const LatentVector& z);

/// Batched phi: {N, d} -> {N, H, W, C}. Fills *trace (body layout) when given.
Tensor gen_forward_batch(const GeneratorNet& net, const Tensor& z_batch, Mode mode, ForwardTrace* trace = nullptr);

/// Mean of squared differences.
double loss_mse(const Tensor& a, const Tensor& b);

struct LossAndGrad {
    double loss = 0.0;
    std::vector<double> grad;
};

/// loss_mse(target, phi(z)) and its gradient with respect to z, from one
/// forward and one reverse pass.
LossAndGrad gen_loss_and_grad_z(const GeneratorNet& net, const LatentVector& z, const Tensor& target);

/// Gradient of loss_mse(target, phi(z)) with respect to z.
std::vector<double> gen_backward_z(const GeneratorNet& net, const LatentVector& z, const Tensor& target);

/// Parameter gradients of sum(upstream * phi(z_batch)) in training mode.
/// upstream has image layout {N, H, W, C}.
ParamGrads gen_backward_params(const GeneratorNet& net, const Tensor& z_batch, const Tensor& upstream);

/// Single-sample transposed convolution without bias.
/// x is C_in x H x W, w is C_in x C_out x k x k.
Tensor conv2d_transpose(const Tensor& x, const Tensor& w, int stride, int pad);

/// Central differences (f(v + eps e_i) - f(v - eps e_i)) / (2 eps).
std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> v, double eps = 1e-4);

/// Architecture profile for the fixed DCGAN-style stack:
/// d -> dense(4*4*128) -> BN+ReLU -> tconv(128->64) -> BN+ReLU -> tconv(64->32)
///   -> BN+ReLU -> tconv(32->C) -> tanh, all tconv k4 s2 p1, output 32x32xC.
struct GeneratorProfile {
    std::size_t latent_dim = 16;
    std::size_t channels = 1;

    static GeneratorProfile toy() { return {16, 1}; }
    static GeneratorProfile full() { return {100, 3}; }
};

/// Weights ~ normal(0, 0.02), batch-norm scale 1 / offset 0, running stats (0, 1).
GeneratorNet make_dcgan_generator(const GeneratorProfile& profile, std::uint64_t seed);

/// Strided convs (C->w->2w->4w, k4 s2 p1) with leaky ReLU 0.2, then dense(64w -> 1).
/// w = 32 by default. The final dense layer starts at zero so D(x) = 0.5 for every input.
DiscriminatorNet make_dcgan_discriminator(std::size_t channels, std::uint64_t seed, std::size_t width = 32);

/// phi(z) = z, one dense layer with identity weight; image shape 1 x dim x 1.
GeneratorNet make_identity_generator(std::size_t dim);

/// phi(z) = A z + b with no activation. A is (numel x d).
GeneratorNet make_linear_generator(const Tensor& a, const Tensor& b, ImageShape image);

}  // namespace ganproj
