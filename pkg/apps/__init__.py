# StreamLab Apps
