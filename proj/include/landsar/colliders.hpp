#pragma once

#include "landsar/terrain.hpp"

#include <Eigen/Core>

#include <memory>
#include <string>
#include <vector>

namespace landsar {

inline constexpr double kRigidConcreteAlpha = 2.5;

/// Rigid barrier. `center` is the middle of the barrier's base; the face
/// normal points upstream at angle `yaw` from +x. `face_angle` leans the
/// upstream face back (rotation about the width axis). The collider box
/// extends `height` above the base and `height` below it as a footing.
struct Barrier {
    std::string id;
    Eigen::Vector3d center = Eigen::Vector3d::Zero();
    double yaw = 0.0;
    double height = 3.0;
    double width = 10.0;
    double thickness = 1.0;
    double face_angle = 0.0;
    double alpha = kRigidConcreteAlpha;

    /// Horizontal unit vector pointing upstream, away from the face.
    Eigen::Vector3d face_normal() const;
    /// Horizontal unit vector along the barrier's width.
    Eigen::Vector3d width_axis() const;
    void validate() const;

    bool operator==(const Barrier&) const = default;
};

struct ColliderHit {
    double distance;
    Eigen::Vector3d normal;  // unit, outward
};

/// Box with arbitrary orientation. `axes` columns are the local axes in world space.
struct OrientedBox {
    Eigen::Vector3d center;
    Eigen::Matrix3d axes;
    Eigen::Vector3d half;
    Eigen::Vector3d aabb_min, aabb_max;

    static OrientedBox from_barrier(const Barrier& b);
    static OrientedBox axis_aligned(const Eigen::Vector3d& lo, const Eigen::Vector3d& hi);
    ColliderHit query(const Eigen::Vector3d& p) const;
    bool near(const Eigen::Vector3d& p, double margin) const;
};

/// Building footprint extruded to a box.
struct Building {
    std::string id;
    Eigen::Vector3d min, max;
};

/// Everything fluid and boulders collide with: the terrain heightfield, the
/// building boxes, and the steerable barriers.
class ColliderSet {
public:
    ColliderSet() = default;
    ColliderSet(std::shared_ptr<const TerrainGrid> terrain, std::vector<Building> buildings);

    const TerrainGrid* terrain() const { return terrain_.get(); }
    std::shared_ptr<const TerrainGrid> terrain_ptr() const { return terrain_; }
    bool terrain_enabled() const { return terrain_ && terrain_enabled_; }
    void set_terrain_enabled(bool on) { terrain_enabled_ = on; }

    const std::vector<Building>& buildings() const { return buildings_; }
    const std::vector<OrientedBox>& building_boxes() const { return building_boxes_; }

    const std::vector<Barrier>& barriers() const { return barriers_; }
    const std::vector<OrientedBox>& barrier_boxes() const { return barrier_boxes_; }
    const Barrier* find_barrier(const std::string& id) const;
    void add_barrier(const Barrier& b);
    void update_barrier(const Barrier& b);
    void remove_barrier(const std::string& id);

    /// Signed distance to the terrain surface: vertical gap scaled by the
    /// normal's z component (exact for planes).
    ColliderHit terrain_query(const Eigen::Vector3d& p) const;
    /// Closest collider of any kind.
    ColliderHit query(const Eigen::Vector3d& p) const;
    /// Minimum signed distance over each collider separately (for checks).
    double min_distance(const Eigen::Vector3d& p) const;

private:
    std::shared_ptr<const TerrainGrid> terrain_;
    bool terrain_enabled_ = true;
    std::vector<Building> buildings_;
    std::vector<OrientedBox> building_boxes_;
    std::vector<Barrier> barriers_;
    std::vector<OrientedBox> barrier_boxes_;
};

}  // namespace landsar
