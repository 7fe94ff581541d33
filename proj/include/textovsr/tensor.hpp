#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace tovsr {

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& m) : std::runtime_error("shape error: " + m) {}
};
struct RangeError : std::runtime_error {
    explicit RangeError(const std::string& m) : std::runtime_error("range error: " + m) {}
};
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& m) : std::runtime_error("config error: " + m) {}
};
struct IoError : std::runtime_error {
    explicit IoError(const std::string& m) : std::runtime_error("i/o error: " + m) {}
};
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& m) : std::runtime_error("numeric error: " + m) {}
};

// Live/peak byte counters over all Tensor payloads. The chunked-inference
// memory bound is asserted against these.
struct AllocStats {
    static std::atomic<long long>& live() {
        static std::atomic<long long> v{0};
        return v;
    }
    static std::atomic<long long>& peak() {
        static std::atomic<long long> v{0};
        return v;
    }
    static void on_alloc(long long bytes) {
        long long now = live().fetch_add(bytes) + bytes;
        long long p = peak().load();
        while (now > p && !peak().compare_exchange_weak(p, now)) {}
    }
    static void on_free(long long bytes) { live().fetch_sub(bytes); }
    static void reset_peak() { peak().store(live().load()); }
};

// Dense row-major tensor, rank 0..4. Value semantics; moves are cheap.
template <class S>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> dims, S fill = S(0)) : dims_(std::move(dims)) {
        for (int d : dims_)
            if (d <= 0) throw ShapeError("non-positive dimension");
        data_.assign(numel_(), fill);
        AllocStats::on_alloc(bytes_());
    }
    Tensor(std::initializer_list<int> dims, S fill = S(0))
        : Tensor(std::vector<int>(dims), fill) {}

    Tensor(const Tensor& o) : dims_(o.dims_), data_(o.data_) {
        AllocStats::on_alloc(bytes_());
    }
    Tensor(Tensor&& o) noexcept : dims_(std::move(o.dims_)), data_(std::move(o.data_)) {
        o.dims_.clear();
    }
    Tensor& operator=(const Tensor& o) {
        if (this != &o) {
            AllocStats::on_free(bytes_());
            dims_ = o.dims_;
            data_ = o.data_;
            AllocStats::on_alloc(bytes_());
        }
        return *this;
    }
    Tensor& operator=(Tensor&& o) noexcept {
        if (this != &o) {
            AllocStats::on_free(bytes_());
            dims_ = std::move(o.dims_);
            data_ = std::move(o.data_);
            o.dims_.clear();
        }
        return *this;
    }
    ~Tensor() { AllocStats::on_free(bytes_()); }

    bool empty() const { return dims_.empty(); }
    int rank() const { return (int)dims_.size(); }
    const std::vector<int>& dims() const { return dims_; }
    int size(int i) const { return dims_.at(i); }
    long long numel() const { return (long long)data_.size(); }

    S* data() { return data_.data(); }
    const S* data() const { return data_.data(); }
    S& operator[](long long i) { return data_[(size_t)i]; }
    const S& operator[](long long i) const { return data_[(size_t)i]; }

    // (c,h,w) indexing
    S& at(int c, int y, int x) { return data_[((size_t)c * dims_[1] + y) * dims_[2] + x]; }
    const S& at(int c, int y, int x) const {
        return data_[((size_t)c * dims_[1] + y) * dims_[2] + x];
    }
    // (n,c,h,w) indexing
    S& at(int n, int c, int y, int x) {
        return data_[(((size_t)n * dims_[1] + c) * dims_[2] + y) * dims_[3] + x];
    }
    const S& at(int n, int c, int y, int x) const {
        return data_[(((size_t)n * dims_[1] + c) * dims_[2] + y) * dims_[3] + x];
    }
    // (r,c) indexing
    S& at(int r, int c) { return data_[(size_t)r * dims_[1] + c]; }
    const S& at(int r, int c) const { return data_[(size_t)r * dims_[1] + c]; }

    bool same_shape(const Tensor& o) const { return dims_ == o.dims_; }

    Tensor reshaped(std::vector<int> dims) const {
        long long n = 1;
        for (int d : dims) n *= d;
        if (n != numel()) throw ShapeError("reshape element count mismatch");
        Tensor out = *this;
        out.dims_ = std::move(dims);
        return out;
    }

    void fill(S v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        for (const S& v : data_)
            if (!std::isfinite((double)v)) return false;
        return true;
    }

    template <class T>
    Tensor<T> cast() const {
        Tensor<T> out(dims_);
        for (long long i = 0; i < numel(); ++i) out[i] = (T)data_[(size_t)i];
        return out;
    }

    static Tensor zeros_like(const Tensor& o) { return Tensor(o.dims_); }

private:
    long long numel_() const {
        long long n = 1;
        for (int d : dims_) n *= d;
        return dims_.empty() ? 0 : n;
    }
    long long bytes_() const { return (long long)data_.size() * (long long)sizeof(S); }

    std::vector<int> dims_;
    std::vector<S> data_;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

template <class S>
inline std::string shape_str(const Tensor<S>& t) {
    std::string s = "(";
    for (int i = 0; i < t.rank(); ++i) s += (i ? "," : "") + std::to_string(t.size(i));
    return s + ")";
}

}  // namespace tovsr
