#include "rfn/params.hpp"

#include <cmath>
#include <stdexcept>

namespace rfn {

void ParamSet::add(const std::string& name, Matrix value, bool trainable) {
    if (contains(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
    index_[name] = entries_.size();
    entries_.push_back({name, std::move(value), trainable});
}

const Matrix& ParamSet::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
    return entries_[it->second].value;
}

Matrix& ParamSet::get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
    return entries_[it->second].value;
}

size_t ParamSet::scalar_count() const {
    size_t n = 0;
    for (const auto& e : entries_) n += static_cast<size_t>(e.value.size());
    return n;
}

nlohmann::json matrix_to_json(const Matrix& m) {
    nlohmann::json data = nlohmann::json::array();
    // Row-major flattening.
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
    return {{"shape", {m.rows(), m.cols()}}, {"data", data}};
}

Matrix matrix_from_json(const nlohmann::json& j) {
    const auto rows = j.at("shape").at(0).get<Eigen::Index>();
    const auto cols = j.at("shape").at(1).get<Eigen::Index>();
    const auto& data = j.at("data");
    if (static_cast<Eigen::Index>(data.size()) != rows * cols)
        throw std::invalid_argument("array payload does not match its shape");
    Matrix m(rows, cols);
    size_t k = 0;
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[k++].get<double>();
    return m;
}

nlohmann::json ParamSet::to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : entries_) {
        auto j = matrix_to_json(e.value);
        j["name"] = e.name;
        j["trainable"] = e.trainable;
        arr.push_back(std::move(j));
    }
    return arr;
}

ParamSet ParamSet::from_json(const nlohmann::json& j) {
    ParamSet p;
    for (const auto& e : j) p.add(e.at("name").get<std::string>(), matrix_from_json(e), e.value("trainable", true));
    return p;
}

Binding::Binding(ad::Tape& tape, const ParamSet& params) : tape_(&tape), params_(&params) {
    for (const auto& e : params.entries())
        values_.emplace(e.name, e.trainable ? tape.parameter(e.value) : tape.constant(e.value));
}

const ad::Value& Binding::operator[](const std::string& name) const {
    auto it = values_.find(name);
    if (it == values_.end()) throw std::out_of_range("parameter '" + name + "' is not bound");
    return it->second;
}

std::vector<Matrix> Binding::gradients() const {
    std::vector<Matrix> out;
    out.reserve(params_->size());
    for (const auto& e : params_->entries()) {
        if (e.trainable)
            out.push_back(tape_->grad(values_.at(e.name)));
        else
            out.push_back(Matrix::Zero(e.value.rows(), e.value.cols()));
    }
    return out;
}

Matrix glorot(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> u(-limit, limit);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = u(rng);
    return m;
}

Adam::Adam(const ParamSet& params, Options opt) : opt_(opt) {
    for (const auto& e : params.entries()) {
        m_.push_back(Matrix::Zero(e.value.rows(), e.value.cols()));
        v_.push_back(Matrix::Zero(e.value.rows(), e.value.cols()));
    }
}

double Adam::step(ParamSet& params, const std::vector<Matrix>& grads) {
    auto& entries = params.entries();
    if (grads.size() != entries.size()) throw std::invalid_argument("Adam::step: gradient count mismatch");
    double sq = 0.0;
    for (size_t i = 0; i < grads.size(); ++i)
        if (entries[i].trainable) sq += grads[i].squaredNorm();
    const double norm = std::sqrt(sq);
    const double clip = (opt_.clip_norm > 0 && norm > opt_.clip_norm) ? opt_.clip_norm / norm : 1.0;
    ++t_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < grads.size(); ++i) {
        if (!entries[i].trainable) continue;
        const Matrix g = clip * grads[i];
        m_[i] = opt_.beta1 * m_[i] + (1.0 - opt_.beta1) * g;
        v_[i] = opt_.beta2 * v_[i] + (1.0 - opt_.beta2) * g.cwiseProduct(g);
        const Eigen::ArrayXXd mhat = m_[i].array() / bc1;
        const Eigen::ArrayXXd vhat = v_[i].array() / bc2;
        entries[i].value.array() -= opt_.lr * mhat / (vhat.sqrt() + opt_.eps);
    }
    return norm;
}

nlohmann::json Adam::to_json() const {
    nlohmann::json m = nlohmann::json::array(), v = nlohmann::json::array();
    for (const auto& x : m_) m.push_back(matrix_to_json(x));
    for (const auto& x : v_) v.push_back(matrix_to_json(x));
    return {{"t", t_}, {"m", m}, {"v", v}, {"lr", opt_.lr}};
}

void Adam::load_json(const nlohmann::json& j) {
    t_ = j.at("t").get<long>();
    m_.clear();
    v_.clear();
    for (const auto& x : j.at("m")) m_.push_back(matrix_from_json(x));
    for (const auto& x : j.at("v")) v_.push_back(matrix_from_json(x));
}

}  // namespace rfn
