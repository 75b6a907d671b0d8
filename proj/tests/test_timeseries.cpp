#include "doctest.h"

#include "rfn/timeseries.hpp"

#include <filesystem>
#include <random>

using namespace rfn;
using namespace rfn::data;

namespace {

Instance make(const std::string& id, std::vector<double> times, const Matrix& values, const Matrix& mask) {
    Instance inst;
    inst.id = id;
    inst.times = Eigen::Map<Vector>(times.data(), static_cast<Eigen::Index>(times.size()));
    inst.values = values;
    inst.mask = mask;
    return inst;
}

Dataset random_dataset(int n, int dim, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> g(0.0, 3.0);
    Dataset ds;
    ds.dim = dim;
    ds.horizon = 1.0;
    for (int i = 0; i < n; ++i) {
        const int k = 1 + static_cast<int>(u(rng) * 6);
        std::vector<double> t;
        double cur = 0.0;
        for (int j = 0; j < k; ++j) {
            cur += (1.0 / (k + 1)) * (0.5 + 0.5 * u(rng));
            t.push_back(cur);
        }
        Matrix m(dim, k), x(dim, k);
        for (int j = 0; j < k; ++j) {
            for (int d = 0; d < dim; ++d) {
                m(d, j) = u(rng) < 0.6 ? 1.0 : 0.0;
                x(d, j) = m(d, j) == 1.0 ? g(rng) : 0.0;
            }
            if (m.col(j).sum() == 0) {
                m(0, j) = 1.0;
                x(0, j) = g(rng);
            }
        }
        ds.instances.push_back(make("inst" + std::to_string(i), t, x, m));
    }
    return ds;
}

std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("rfn_test_" + name);
    std::filesystem::remove_all(p);
    return p;
}

}  // namespace

TEST_CASE("classify") {
    CHECK(classify(make("a", {0.1, 0.2, 0.3}, Matrix::Ones(2, 3), Matrix::Ones(2, 3))) == SeriesKind::Syn);
    Matrix m = Matrix::Ones(2, 3);
    m(1, 2) = 0;
    Matrix x = Matrix::Ones(2, 3);
    x(1, 2) = 0;
    CHECK(classify(make("b", {0.1, 0.2, 0.3}, x, m)) == SeriesKind::Asyn);
    CHECK(classify(make("c", {0.5}, Matrix::Ones(1, 1), Matrix::Ones(1, 1))) == SeriesKind::Syn);

    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        const int d = 1 + static_cast<int>(rng() % 6), k = 1 + static_cast<int>(rng() % 8);
        std::vector<double> t;
        for (int j = 0; j < k; ++j) t.push_back(0.1 * (j + 1));
        CHECK(classify(make("r", t, Matrix::Ones(d, k), Matrix::Ones(d, k))) == SeriesKind::Syn);
    }
}

TEST_CASE("parse the documented CSV layout") {
    const std::string text =
        "instance_id,time,x_1,x_2,m_1,m_2\n"
        "a,0.25,1.5,-2,1,1\n"
        "a,0.75,0,3.25,0,1\n";
    const Dataset ds = load_csv_text(text);
    REQUIRE(ds.instances.size() == 1);
    const Instance& a = ds.instances[0];
    CHECK(ds.dim == 2);
    CHECK(a.times == (Vector(2) << 0.25, 0.75).finished());
    CHECK(a.values == (Matrix(2, 2) << 1.5, 0, -2, 3.25).finished());
    CHECK(a.mask == (Matrix(2, 2) << 1, 0, 1, 1).finished());
}

TEST_CASE("loader errors carry the row number") {
    const std::string head = "instance_id,time,x_1,m_1\n";
    auto row_of = [](const std::string& text) {
        try {
            load_csv_text(text);
        } catch (const DataError& e) {
            return e.row();
        }
        return -1L;
    };
    CHECK(row_of(head + "a,0.2,1,1\na,0.1,1,1\n") == 2);
    CHECK(row_of(head + "a,0.2,1,1\na,0.2,2,1\n") == 2);
    CHECK(row_of(head + "a,0.2,1,1\nb,0.1,,1\n") == 2);
    CHECK_THROWS_AS(load_csv_text(head + "a,0.2,1,1\na,0.1,1,1\n"), DataError);
    CHECK_THROWS_AS(load_csv_text("id,t,x\n"), DataError);
}

TEST_CASE("duplicates merge when requested and masked values are zeroed") {
    const std::string text =
        "instance_id,time,x_1,x_2,m_1,m_2\n"
        "a,0.5,1,9,1,0\n"
        "a,0.5,0,4,0,1\n";
    LoadReport rep;
    LoadOptions opt;
    opt.merge_duplicates = true;
    const Dataset ds = load_csv_text(text, opt, &rep);
    CHECK(rep.merged_duplicates == 1);
    CHECK(rep.zeroed_values == 1);
    CHECK(ds.instances[0].events() == 1);
    CHECK(ds.instances[0].mask.col(0) == Vector::Ones(2));
    CHECK(ds.instances[0].values.col(0) == (Vector(2) << 1, 4).finished());
}

TEST_CASE("save/load round trip is exact") {
    std::mt19937_64 rng(9);
    Dataset ds = random_dataset(100, 3, rng);
    ds = split(std::move(ds), {0.7, 0.15, 0.15}, 4);
    const auto dir = temp_dir("roundtrip");
    save(ds, dir);
    const Dataset back = load(dir);
    REQUIRE(back.instances.size() == ds.instances.size());
    CHECK(back.splits == ds.splits);
    for (size_t i = 0; i < ds.instances.size(); ++i) {
        CHECK(back.instances[i].id == ds.instances[i].id);
        CHECK(back.instances[i].times == ds.instances[i].times);
        CHECK(back.instances[i].values == ds.instances[i].values);
        CHECK(back.instances[i].mask == ds.instances[i].mask);
    }
    // Writing the loaded data again reproduces the text exactly.
    CHECK(to_csv_text(back) == to_csv_text(ds));
    std::filesystem::remove_all(dir);
}

TEST_CASE("split sizes and determinism") {
    std::mt19937_64 rng(1);
    Dataset ds = random_dataset(1000, 1, rng);
    const Dataset a = split(ds, {0.7, 0.15, 0.15}, 0);
    CHECK(a.subset(Split::Train).size() == 700);
    CHECK(a.subset(Split::Valid).size() == 150);
    CHECK(a.subset(Split::Test).size() == 150);
    CHECK(split(ds, {0.7, 0.15, 0.15}, 0).splits == a.splits);
    CHECK(split(ds, {0.7, 0.15, 0.15}, 1).splits != a.splits);
    CHECK(split(ds, {1, 0, 0}, 0).subset(Split::Train).size() == 1000);
    CHECK_THROWS(split(ds, {0.7, 0.2, 0.2}, 0));
}

TEST_CASE("instance invariants") {
    CHECK_THROWS_AS(make("a", {0.2, 0.2}, Matrix::Ones(1, 2), Matrix::Ones(1, 2)).validate(1.0), DataError);
    CHECK_THROWS_AS(make("a", {0.2, 1.5}, Matrix::Ones(1, 2), Matrix::Ones(1, 2)).validate(1.0), DataError);
    Matrix m = Matrix::Ones(2, 1);
    m(1, 0) = 0;
    CHECK_THROWS_AS(make("a", {0.2}, Matrix::Ones(2, 1), m).validate(1.0), DataError);  // value under mask 0
    CHECK_THROWS_AS(make("a", {0.2}, Matrix::Zero(2, 1), Matrix::Zero(2, 1)).validate(1.0), DataError);
}

TEST_CASE("standardization uses observed training entries and inverts") {
    Dataset ds;
    ds.dim = 2;
    Matrix m = Matrix::Ones(2, 3);
    m(1, 1) = 0;
    Matrix x(2, 3);
    x << 1, 2, 3, 10, 0, 30;
    ds.instances.push_back(make("a", {0.1, 0.2, 0.3}, x, m));
    const Dataset s = standardize(ds);
    REQUIRE(s.standardization);
    CHECK(s.standardization->mean(0) == doctest::Approx(2.0));
    CHECK(s.standardization->mean(1) == doctest::Approx(20.0));
    CHECK(s.standardization->std(0) == doctest::Approx(1.0));
    CHECK(s.standardization->std(1) == doctest::Approx(std::sqrt(200.0)));
    CHECK(s.instances[0].values(1, 1) == 0.0);
    const Matrix back = s.standardization->invert_rows(s.instances[0].values.transpose());
    CHECK(back(0, 0) == doctest::Approx(1.0));
    CHECK(back(2, 1) == doctest::Approx(30.0));
    CHECK_THROWS(standardize(s));
}
