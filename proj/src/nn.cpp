#include "splitguard/nn.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "splitguard/errors.hpp"
#include "splitguard/kernels.hpp"

namespace splitguard::nn {

std::string activation_name(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::identity: return "identity";
        case Activation::sigmoid: return "sigmoid";
    }
    return "?";
}

Activation activation_from_name(const std::string& name) {
    if (name == "relu") return Activation::relu;
    if (name == "identity") return Activation::identity;
    if (name == "sigmoid") return Activation::sigmoid;
    throw FormatError("unknown activation: " + name);
}

std::size_t MlpModel::input_dim() const {
    if (layers.empty()) throw ShapeError("model has no layers");
    return layers.front().weights.cols();
}

std::size_t MlpModel::output_dim() const {
    if (layers.empty()) throw ShapeError("model has no layers");
    return layers.back().weights.rows();
}

std::size_t MlpModel::head_dim(const std::string& name) const {
    auto it = heads.find(name);
    if (it == heads.end()) throw ContractError("unknown head: " + name);
    return it->second.weights.rows();
}

void MlpModel::validate() const {
    if (layers.empty()) throw ShapeError("model has no layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const Layer& l = layers[i];
        if (l.bias.size() != l.weights.rows()) throw ShapeError("bias width mismatch in layer " + std::to_string(i));
        if (i > 0 && layers[i - 1].weights.rows() != l.weights.cols()) {
            throw ShapeError("layers " + std::to_string(i - 1) + " and " + std::to_string(i) + " do not compose");
        }
        for (double v : l.weights.values()) {
            if (!std::isfinite(v)) throw DomainError("non-finite weight in layer " + std::to_string(i));
        }
        for (double v : l.bias) {
            if (!std::isfinite(v)) throw DomainError("non-finite bias in layer " + std::to_string(i));
        }
    }
    for (const auto& [name, head] : heads) {
        if (head.weights.cols() != output_dim()) throw ShapeError("head '" + name + "' does not match trunk output");
        if (head.bias.size() != head.weights.rows()) throw ShapeError("head '" + name + "' bias width mismatch");
    }
}

namespace {

Matrix glorot(std::size_t out, std::size_t in, Rng& rng) {
    Matrix w(out, in);
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    for (double& v : w.values()) v = rng.uniform(-limit, limit);
    return w;
}

}  // namespace

MlpModel make_mlp(const std::vector<std::size_t>& dims, const std::vector<Activation>& activations,
                  Rng& rng) {
    if (dims.size() < 2) throw ShapeError("make_mlp needs at least input and output dims");
    if (activations.size() != dims.size() - 1) throw ShapeError("one activation per layer required");
    MlpModel m;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        Layer l;
        l.weights = glorot(dims[i + 1], dims[i], rng);
        l.bias.assign(dims[i + 1], 0.0);
        l.activation = activations[i];
        m.layers.push_back(std::move(l));
    }
    return m;
}

void add_head(MlpModel& model, const std::string& name, std::size_t out_dim, Rng& rng) {
    Head h;
    h.weights = glorot(out_dim, model.output_dim(), rng);
    h.bias.assign(out_dim, 0.0);
    model.heads[name] = std::move(h);
    model.bump_version();
}

MlpModel compose(const MlpModel& front, const MlpModel& back) {
    if (!front.heads.empty()) throw ShapeError("compose: front model must be headless");
    if (front.output_dim() != back.input_dim()) throw ShapeError("compose: boundary widths differ");
    MlpModel m;
    m.layers = front.layers;
    m.layers.insert(m.layers.end(), back.layers.begin(), back.layers.end());
    m.heads = back.heads;
    return m;
}

namespace {

void apply_activation(Matrix& m, Activation a) {
    switch (a) {
        case Activation::identity: return;
        case Activation::relu:
            for (double& v : m.values()) v = v > 0.0 ? v : 0.0;
            return;
        case Activation::sigmoid:
            for (double& v : m.values()) v = 1.0 / (1.0 + std::exp(-v));
            return;
    }
}

// d(activation)/d(pre), multiplied into grad in place.
void apply_activation_grad(Matrix& grad, const Matrix& preact, Activation a) {
    switch (a) {
        case Activation::identity: return;
        case Activation::relu:
            for (std::size_t i = 0; i < grad.size(); ++i) {
                if (preact.values()[i] <= 0.0) grad.values()[i] = 0.0;
            }
            return;
        case Activation::sigmoid:
            for (std::size_t i = 0; i < grad.size(); ++i) {
                const double s = 1.0 / (1.0 + std::exp(-preact.values()[i]));
                grad.values()[i] *= s * (1.0 - s);
            }
            return;
    }
}

Matrix linear(const Matrix& x, const Matrix& w, const std::vector<double>& b) {
    Matrix out = linalg::matmul_nt(x, w);
    for (std::size_t r = 0; r < out.rows(); ++r) {
        double* row = out.row(r);
        for (std::size_t c = 0; c < out.cols(); ++c) row[c] += b[c];
    }
    return out;
}

}  // namespace

Trace forward(const MlpModel& model, const Matrix& inputs, const std::optional<std::string>& head) {
    if (model.layers.empty()) throw ShapeError("forward: model has no layers");
    if (inputs.cols() != model.input_dim()) throw ShapeError("forward: input width mismatch");
    Trace trace;
    trace.model_version = model.version();
    Matrix act = inputs;
    for (const Layer& layer : model.layers) {
        LayerCache cache;
        cache.input = act;
        cache.preact = linear(act, layer.weights, layer.bias);
        act = cache.preact;
        apply_activation(act, layer.activation);
        trace.trunk.push_back(std::move(cache));
    }
    if (head) {
        auto it = model.heads.find(*head);
        if (it == model.heads.end()) throw ContractError("forward: unknown head " + *head);
        trace.head = head;
        trace.head_input = act;
        trace.output = linear(act, it->second.weights, it->second.bias);
    } else {
        trace.output = std::move(act);
    }
    return trace;
}

GradientBundle zero_grads(const MlpModel& model) {
    GradientBundle g;
    for (const Layer& l : model.layers) {
        LayerGrad lg;
        lg.weights = Matrix(l.weights.rows(), l.weights.cols());
        lg.bias.assign(l.bias.size(), 0.0);
        g.layers.push_back(std::move(lg));
    }
    for (const auto& [name, head] : model.heads) {
        LayerGrad lg;
        lg.weights = Matrix(head.weights.rows(), head.weights.cols());
        lg.bias.assign(head.bias.size(), 0.0);
        g.heads[name] = std::move(lg);
    }
    return g;
}

void GradientBundle::add(const GradientBundle& other) {
    if (layers.size() != other.layers.size()) throw ShapeError("GradientBundle::add: layer count mismatch");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (!layers[i].weights.same_shape(other.layers[i].weights)) {
            throw ShapeError("GradientBundle::add: layer shape mismatch");
        }
        kernels::axpy(1.0, other.layers[i].weights.data(), layers[i].weights.data(),
                      layers[i].weights.size());
        kernels::axpy(1.0, other.layers[i].bias.data(), layers[i].bias.data(), layers[i].bias.size());
    }
    for (const auto& [name, grad] : other.heads) {
        auto it = heads.find(name);
        if (it == heads.end()) throw ShapeError("GradientBundle::add: head mismatch: " + name);
        kernels::axpy(1.0, grad.weights.data(), it->second.weights.data(), grad.weights.size());
        kernels::axpy(1.0, grad.bias.data(), it->second.bias.data(), grad.bias.size());
    }
    if (!other.input.empty()) {
        if (input.empty()) {
            input = other.input;
        } else if (input.same_shape(other.input)) {
            kernels::axpy(1.0, other.input.data(), input.data(), input.size());
        } else {
            throw ShapeError("GradientBundle::add: input grad shape mismatch");
        }
    }
}

void GradientBundle::scale(double factor) {
    for (LayerGrad& lg : layers) {
        kernels::scale(lg.weights.data(), factor, lg.weights.size());
        kernels::scale(lg.bias.data(), factor, lg.bias.size());
    }
    for (auto& [name, lg] : heads) {
        kernels::scale(lg.weights.data(), factor, lg.weights.size());
        kernels::scale(lg.bias.data(), factor, lg.bias.size());
    }
    if (!input.empty()) kernels::scale(input.data(), factor, input.size());
}

GradientBundle backward(const MlpModel& model, const Trace& trace, const Matrix& output_grad) {
    if (trace.model_version != model.version()) {
        throw ContractError("backward: trace is stale (model changed since forward)");
    }
    if (trace.trunk.size() != model.layers.size()) throw ShapeError("backward: trace/model mismatch");
    if (!output_grad.same_shape(trace.output)) throw ShapeError("backward: output_grad shape mismatch");

    GradientBundle grads = zero_grads(model);
    Matrix d_act;  // gradient w.r.t. the current activation

    if (trace.head) {
        const Head& head = model.heads.at(*trace.head);
        LayerGrad& hg = grads.heads.at(*trace.head);
        hg.weights = linalg::matmul_tn(output_grad, trace.head_input);
        for (std::size_t r = 0; r < output_grad.rows(); ++r) {
            kernels::axpy(1.0, output_grad.row(r), hg.bias.data(), hg.bias.size());
        }
        d_act = linalg::matmul_nn(output_grad, head.weights);
    } else {
        d_act = output_grad;
    }

    for (std::size_t i = model.layers.size(); i-- > 0;) {
        const Layer& layer = model.layers[i];
        const LayerCache& cache = trace.trunk[i];
        apply_activation_grad(d_act, cache.preact, layer.activation);  // now d(pre)
        LayerGrad& lg = grads.layers[i];
        lg.weights = linalg::matmul_tn(d_act, cache.input);
        for (std::size_t r = 0; r < d_act.rows(); ++r) {
            kernels::axpy(1.0, d_act.row(r), lg.bias.data(), lg.bias.size());
        }
        d_act = linalg::matmul_nn(d_act, layer.weights);
    }
    grads.input = std::move(d_act);
    return grads;
}

Matrix softmax(const Matrix& logits) {
    Matrix p = logits;
    for (std::size_t r = 0; r < p.rows(); ++r) {
        double* row = p.row(r);
        double mx = row[0];
        for (std::size_t c = 1; c < p.cols(); ++c) mx = std::max(mx, row[c]);
        double z = 0.0;
        for (std::size_t c = 0; c < p.cols(); ++c) {
            row[c] = std::exp(row[c] - mx);
            z += row[c];
        }
        for (std::size_t c = 0; c < p.cols(); ++c) row[c] /= z;
    }
    return p;
}

PerSampleCrossEntropy per_sample_cross_entropy(const Matrix& logits, const std::vector<int>& labels) {
    if (logits.rows() == 0) throw DomainError("cross entropy on empty batch");
    if (labels.size() != logits.rows()) throw ShapeError("label count != batch size");
    PerSampleCrossEntropy out;
    out.grad = softmax(logits);
    out.losses.resize(labels.size());
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        const int y = labels[r];
        if (y < 0 || static_cast<std::size_t>(y) >= logits.cols()) {
            throw DomainError("label out of range: " + std::to_string(y));
        }
        const double p = out.grad(r, static_cast<std::size_t>(y));
        out.losses[r] = -std::log(std::max(p, 1e-300));
        out.grad(r, static_cast<std::size_t>(y)) -= 1.0;
    }
    return out;
}

CrossEntropy cross_entropy(const Matrix& logits, const std::vector<int>& labels) {
    PerSampleCrossEntropy ps = per_sample_cross_entropy(logits, labels);
    CrossEntropy out;
    const double inv_b = 1.0 / static_cast<double>(labels.size());
    out.loss = kernels::sum(ps.losses.data(), ps.losses.size()) * inv_b;
    out.grad = std::move(ps.grad);
    kernels::scale(out.grad.data(), inv_b, out.grad.size());
    return out;
}

namespace {

void sgd_apply(Matrix& param, std::vector<double>& bias, const LayerGrad& grad, LayerGrad& vel,
               double lr, double momentum) {
    if (!param.same_shape(grad.weights) || bias.size() != grad.bias.size()) {
        throw ShapeError("sgd_step: gradient shape mismatch");
    }
    kernels::scale(vel.weights.data(), momentum, vel.weights.size());
    kernels::axpy(1.0, grad.weights.data(), vel.weights.data(), vel.weights.size());
    kernels::axpy(-lr, vel.weights.data(), param.data(), param.size());
    kernels::scale(vel.bias.data(), momentum, vel.bias.size());
    kernels::axpy(1.0, grad.bias.data(), vel.bias.data(), vel.bias.size());
    kernels::axpy(-lr, vel.bias.data(), bias.data(), bias.size());
}

}  // namespace

void sgd_step(MlpModel& model, const GradientBundle& grads, double lr, double momentum,
              GradientBundle& velocity) {
    if (lr <= 0.0) throw DomainError("sgd_step: lr must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw DomainError("sgd_step: momentum outside [0,1)");
    if (grads.layers.size() != model.layers.size()) throw ShapeError("sgd_step: layer count mismatch");
    if (velocity.layers.empty() && velocity.heads.empty()) velocity = zero_grads(model);
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        sgd_apply(model.layers[i].weights, model.layers[i].bias, grads.layers[i], velocity.layers[i],
                  lr, momentum);
    }
    for (auto& [name, head] : model.heads) {
        auto git = grads.heads.find(name);
        if (git == grads.heads.end()) continue;  // loss did not touch this head
        sgd_apply(head.weights, head.bias, git->second, velocity.heads.at(name), lr, momentum);
    }
    model.bump_version();
}

double clip_grad_norm(GradientBundle& grads, double max_norm) {
    double sq = 0.0;
    for (const LayerGrad& lg : grads.layers) {
        sq += kernels::dot(lg.weights.data(), lg.weights.data(), lg.weights.size());
        sq += kernels::dot(lg.bias.data(), lg.bias.data(), lg.bias.size());
    }
    for (const auto& [name, lg] : grads.heads) {
        sq += kernels::dot(lg.weights.data(), lg.weights.data(), lg.weights.size());
        sq += kernels::dot(lg.bias.data(), lg.bias.data(), lg.bias.size());
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double factor = max_norm / norm;
        for (LayerGrad& lg : grads.layers) {
            kernels::scale(lg.weights.data(), factor, lg.weights.size());
            kernels::scale(lg.bias.data(), factor, lg.bias.size());
        }
        for (auto& [name, lg] : grads.heads) {
            kernels::scale(lg.weights.data(), factor, lg.weights.size());
            kernels::scale(lg.bias.data(), factor, lg.bias.size());
        }
    }
    return norm;
}

std::size_t param_count(const MlpModel& model, bool include_heads) {
    std::size_t n = 0;
    for (const Layer& l : model.layers) n += l.weights.size() + l.bias.size();
    if (include_heads) {
        for (const auto& [name, h] : model.heads) n += h.weights.size() + h.bias.size();
    }
    return n;
}

std::vector<double> flatten_params(const MlpModel& model, bool include_heads) {
    std::vector<double> flat;
    flat.reserve(param_count(model, include_heads));
    for (const Layer& l : model.layers) {
        flat.insert(flat.end(), l.weights.values().begin(), l.weights.values().end());
        flat.insert(flat.end(), l.bias.begin(), l.bias.end());
    }
    if (include_heads) {
        for (const auto& [name, h] : model.heads) {
            flat.insert(flat.end(), h.weights.values().begin(), h.weights.values().end());
            flat.insert(flat.end(), h.bias.begin(), h.bias.end());
        }
    }
    return flat;
}

void set_params(MlpModel& model, const std::vector<double>& flat, bool include_heads) {
    if (flat.size() != param_count(model, include_heads)) throw ShapeError("set_params: size mismatch");
    std::size_t pos = 0;
    auto take = [&](double* dst, std::size_t n) {
        std::copy(flat.begin() + static_cast<std::ptrdiff_t>(pos),
                  flat.begin() + static_cast<std::ptrdiff_t>(pos + n), dst);
        pos += n;
    };
    for (Layer& l : model.layers) {
        take(l.weights.data(), l.weights.size());
        take(l.bias.data(), l.bias.size());
    }
    if (include_heads) {
        for (auto& [name, h] : model.heads) {
            take(h.weights.data(), h.weights.size());
            take(h.bias.data(), h.bias.size());
        }
    }
    model.bump_version();
}

std::vector<double> flatten_trunk_grads(const GradientBundle& grads) {
    std::vector<double> flat;
    for (const LayerGrad& lg : grads.layers) {
        flat.insert(flat.end(), lg.weights.values().begin(), lg.weights.values().end());
        flat.insert(flat.end(), lg.bias.begin(), lg.bias.end());
    }
    return flat;
}

namespace {

void write_values(std::ostringstream& os, const double* v, std::size_t n) {
    char buf[40];
    for (std::size_t i = 0; i < n; ++i) {
        std::snprintf(buf, sizeof(buf), "%a", v[i]);
        os << buf << (i + 1 == n ? "" : " ");
    }
    os << "\n";
}

std::vector<double> read_values(std::istringstream& is, std::size_t n) {
    std::vector<double> vals(n);
    std::string tok;
    for (std::size_t i = 0; i < n; ++i) {
        if (!(is >> tok)) throw FormatError("model file truncated");
        vals[i] = std::strtod(tok.c_str(), nullptr);
    }
    return vals;
}

}  // namespace

std::string serialize_model(const MlpModel& model) {
    std::ostringstream os;
    os << "splitguard-model v1\n";
    os << "trunk " << model.layers.size() << "\n";
    for (const Layer& l : model.layers) {
        os << "layer " << l.weights.rows() << " " << l.weights.cols() << " "
           << activation_name(l.activation) << "\n";
        write_values(os, l.weights.data(), l.weights.size());
        write_values(os, l.bias.data(), l.bias.size());
    }
    os << "heads " << model.heads.size() << "\n";
    for (const auto& [name, h] : model.heads) {
        os << "head " << name << " " << h.weights.rows() << " " << h.weights.cols() << "\n";
        write_values(os, h.weights.data(), h.weights.size());
        write_values(os, h.bias.data(), h.bias.size());
    }
    return os.str();
}

MlpModel parse_model(const std::string& text) {
    std::istringstream is(text);
    std::string magic, version;
    is >> magic >> version;
    if (magic != "splitguard-model" || version != "v1") throw FormatError("bad model header");
    std::string tok;
    std::size_t n_layers = 0;
    is >> tok >> n_layers;
    if (tok != "trunk") throw FormatError("expected trunk section");
    MlpModel m;
    for (std::size_t i = 0; i < n_layers; ++i) {
        std::size_t out = 0, in = 0;
        std::string act;
        is >> tok >> out >> in >> act;
        if (tok != "layer") throw FormatError("expected layer record");
        Layer l;
        l.weights = Matrix(out, in);
        l.weights.values() = read_values(is, out * in);
        l.bias = read_values(is, out);
        l.activation = activation_from_name(act);
        m.layers.push_back(std::move(l));
    }
    std::size_t n_heads = 0;
    is >> tok >> n_heads;
    if (tok != "heads") throw FormatError("expected heads section");
    for (std::size_t i = 0; i < n_heads; ++i) {
        std::string name;
        std::size_t out = 0, in = 0;
        is >> tok >> name >> out >> in;
        if (tok != "head") throw FormatError("expected head record");
        Head h;
        h.weights = Matrix(out, in);
        h.weights.values() = read_values(is, out * in);
        h.bias = read_values(is, out);
        m.heads[name] = std::move(h);
    }
    m.validate();
    return m;
}

void save_model(const MlpModel& model, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open for write: " + path);
    f << serialize_model(model);
}

MlpModel load_model(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open for read: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_model(ss.str());
}

}  // namespace splitguard::nn
