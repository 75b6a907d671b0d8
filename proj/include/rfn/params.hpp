#pragma once

#include "rfn/autodiff.hpp"

#include "json.hpp"

#include <map>
#include <random>
#include <string>
#include <vector>

namespace rfn {

// Ordered collection of named parameter arrays. Non-trainable entries (e.g.
// empirical means) are stored alongside so checkpoints carry everything.
class ParamSet {
public:
    struct Entry {
        std::string name;
        Matrix value;
        bool trainable = true;
    };

    void add(const std::string& name, Matrix value, bool trainable = true);
    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    const Matrix& get(const std::string& name) const;
    Matrix& get(const std::string& name);
    const std::vector<Entry>& entries() const { return entries_; }
    std::vector<Entry>& entries() { return entries_; }
    size_t size() const { return entries_.size(); }
    size_t scalar_count() const;

    nlohmann::json to_json() const;
    static ParamSet from_json(const nlohmann::json& j);

private:
    std::vector<Entry> entries_;
    std::map<std::string, size_t> index_;
};

// Parameters placed on a tape for one forward pass.
class Binding {
public:
    Binding(ad::Tape& tape, const ParamSet& params);

    const ad::Value& operator[](const std::string& name) const;
    ad::Tape& tape() const { return *tape_; }

    // Gradients for every entry of the bound ParamSet (zeros for non-trainable).
    std::vector<Matrix> gradients() const;

private:
    ad::Tape* tape_;
    const ParamSet* params_;
    std::map<std::string, ad::Value> values_;
};

// Glorot-style uniform initialisation for a rows x cols weight.
Matrix glorot(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng);

class Adam {
public:
    struct Options {
        double lr = 1e-3;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
        double clip_norm = 10.0;
    };

    explicit Adam(const ParamSet& params, Options opt);

    // Clips the joint gradient norm to clip_norm, then applies one update.
    // Returns the pre-clip gradient norm.
    double step(ParamSet& params, const std::vector<Matrix>& grads);

    nlohmann::json to_json() const;
    void load_json(const nlohmann::json& j);

private:
    Options opt_;
    std::vector<Matrix> m_;
    std::vector<Matrix> v_;
    long t_ = 0;
};

nlohmann::json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& j);

}  // namespace rfn
