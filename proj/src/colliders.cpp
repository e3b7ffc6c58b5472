#include "landsar/colliders.hpp"

#include "landsar/errors.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace landsar {

Eigen::Vector3d Barrier::face_normal() const { return {std::cos(yaw), std::sin(yaw), 0.0}; }
Eigen::Vector3d Barrier::width_axis() const { return {-std::sin(yaw), std::cos(yaw), 0.0}; }

void Barrier::validate() const {
    if (id.empty()) throw std::invalid_argument("barrier id must not be empty");
    if (!(height > 0 && width > 0 && thickness > 0))
        throw std::invalid_argument(fmt::format("barrier '{}': height, width and thickness must be positive", id));
    if (!(alpha > 0)) throw std::invalid_argument(fmt::format("barrier '{}': alpha must be positive", id));
    if (!center.allFinite() || !std::isfinite(yaw) || !std::isfinite(face_angle))
        throw std::invalid_argument(fmt::format("barrier '{}': non-finite pose", id));
    if (std::abs(face_angle) >= 1.5)
        throw std::invalid_argument(fmt::format("barrier '{}': face angle out of range", id));
}

OrientedBox OrientedBox::from_barrier(const Barrier& b) {
    const Eigen::Vector3d n = b.face_normal();
    const Eigen::Vector3d t = b.width_axis();
    const Eigen::Vector3d up = Eigen::Vector3d::UnitZ();
    const double c = std::cos(b.face_angle), s = std::sin(b.face_angle);
    OrientedBox box;
    box.axes.col(0) = c * n + s * up;
    box.axes.col(1) = t;
    box.axes.col(2) = c * up - s * n;
    const double footing = b.height;
    box.half = {0.5 * b.thickness, 0.5 * b.width, 0.5 * (b.height + footing)};
    box.center = b.center + box.axes.col(2) * (0.5 * (b.height - footing));
    const Eigen::Vector3d reach = box.axes.cwiseAbs() * box.half;
    box.aabb_min = box.center - reach;
    box.aabb_max = box.center + reach;
    return box;
}

OrientedBox OrientedBox::axis_aligned(const Eigen::Vector3d& lo, const Eigen::Vector3d& hi) {
    OrientedBox box;
    box.center = 0.5 * (lo + hi);
    box.axes.setIdentity();
    box.half = 0.5 * (hi - lo);
    box.aabb_min = lo;
    box.aabb_max = hi;
    return box;
}

bool OrientedBox::near(const Eigen::Vector3d& p, double margin) const {
    return (p.array() >= aabb_min.array() - margin).all() && (p.array() <= aabb_max.array() + margin).all();
}

ColliderHit OrientedBox::query(const Eigen::Vector3d& p) const {
    const Eigen::Vector3d local = axes.transpose() * (p - center);
    const Eigen::Vector3d q = local.cwiseAbs() - half;
    Eigen::Vector3d sign;
    for (int k = 0; k < 3; ++k) sign[k] = local[k] < 0 ? -1.0 : 1.0;
    const Eigen::Vector3d outside = q.cwiseMax(0.0);
    const double out_len = outside.norm();
    if (out_len > 0) {
        const Eigen::Vector3d n_local = outside.cwiseProduct(sign) / out_len;
        return {out_len, axes * n_local};
    }
    int axis = 0;
    q.maxCoeff(&axis);
    Eigen::Vector3d n_local = Eigen::Vector3d::Zero();
    n_local[axis] = sign[axis];
    return {q[axis], axes * n_local};
}

ColliderSet::ColliderSet(std::shared_ptr<const TerrainGrid> terrain, std::vector<Building> buildings)
    : terrain_(std::move(terrain)), buildings_(std::move(buildings)) {
    for (const auto& b : buildings_) building_boxes_.push_back(OrientedBox::axis_aligned(b.min, b.max));
}

const Barrier* ColliderSet::find_barrier(const std::string& id) const {
    auto it = std::find_if(barriers_.begin(), barriers_.end(), [&](const Barrier& b) { return b.id == id; });
    return it == barriers_.end() ? nullptr : &*it;
}

void ColliderSet::add_barrier(const Barrier& b) {
    b.validate();
    if (find_barrier(b.id)) throw std::invalid_argument(fmt::format("barrier '{}' already exists", b.id));
    barriers_.push_back(b);
    barrier_boxes_.push_back(OrientedBox::from_barrier(b));
}

void ColliderSet::update_barrier(const Barrier& b) {
    b.validate();
    for (std::size_t i = 0; i < barriers_.size(); ++i) {
        if (barriers_[i].id == b.id) {
            barriers_[i] = b;
            barrier_boxes_[i] = OrientedBox::from_barrier(b);
            return;
        }
    }
    throw UnknownBarrier(b.id);
}

void ColliderSet::remove_barrier(const std::string& id) {
    for (std::size_t i = 0; i < barriers_.size(); ++i) {
        if (barriers_[i].id == id) {
            barriers_.erase(barriers_.begin() + static_cast<std::ptrdiff_t>(i));
            barrier_boxes_.erase(barrier_boxes_.begin() + static_cast<std::ptrdiff_t>(i));
            return;
        }
    }
    throw UnknownBarrier(id);
}

ColliderHit ColliderSet::terrain_query(const Eigen::Vector3d& p) const {
    const auto s = sample_surface(*terrain_, p.x(), p.y());
    const Eigen::Vector3d n = Eigen::Vector3d(-s.dhdx, -s.dhdy, 1.0).normalized();
    return {(p.z() - s.height) * n.z(), n};
}

ColliderHit ColliderSet::query(const Eigen::Vector3d& p) const {
    ColliderHit best{std::numeric_limits<double>::infinity(), Eigen::Vector3d::UnitZ()};
    if (terrain_enabled()) best = terrain_query(p);
    auto consider = [&](const OrientedBox& box) {
        const auto hit = box.query(p);
        if (hit.distance < best.distance) best = hit;
    };
    for (const auto& box : building_boxes_) consider(box);
    for (const auto& box : barrier_boxes_) consider(box);
    return best;
}

double ColliderSet::min_distance(const Eigen::Vector3d& p) const { return query(p).distance; }

}  // namespace landsar
