# StreamLab Packages
